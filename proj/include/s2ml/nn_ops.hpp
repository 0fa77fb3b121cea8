#pragma once

// Structured ops on [C,H,W] tensors: convolution, windowed multi-head
// attention, bilinear upsampling, padding. Convolutions run as im2col + GEMM;
// the im2col buffer is rebuilt in the backward pass instead of being stored.

#include <Eigen/Core>

#include <cmath>
#include <utility>
#include <vector>

#include "s2ml/autodiff.hpp"
#include "s2ml/tensor.hpp"

namespace s2ml {

namespace detail {

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, Tensor<T>& col, int Ho,
            int Wo) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long ocols = static_cast<long>(Ho) * Wo;
  T* out = col.data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        T* row = out + ((static_cast<long>(c) * kh + i) * kw + j) * ocols;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y = oy * stride + i - pad;
          for (int ox = 0; ox < Wo; ++ox) {
            const int xx = ox * stride + j - pad;
            row[static_cast<long>(oy) * Wo + ox] =
                (y >= 0 && y < H && xx >= 0 && xx < W) ? x.at(c, y, xx) : T(0);
          }
        }
      }
}

template <typename T>
void col2im_acc(const Tensor<T>& col, int C, int H, int W, int kh, int kw, int stride, int pad,
                Tensor<T>& dx, int Ho, int Wo) {
  const long ocols = static_cast<long>(Ho) * Wo;
  const T* in = col.data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const T* row = in + ((static_cast<long>(c) * kh + i) * kw + j) * ocols;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y = oy * stride + i - pad;
          if (y < 0 || y >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int xx = ox * stride + j - pad;
            if (xx >= 0 && xx < W) dx.at(c, y, xx) += row[static_cast<long>(oy) * Wo + ox];
          }
        }
      }
}

}  // namespace detail

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// x: [Cin,H,W]; w: [Cout,Cin,kh,kw]; b: [Cout] or an invalid Val for a
// bias-free convolution; zero padding
template <typename T>
Val conv2d(Tape<T>& t, Val x, Val w, Val b, int stride = 1, int pad = -1) {
  const Tensor<T>& X = t.val(x);
  const Tensor<T>& Wt = t.val(w);
  const bool has_bias = b.ok();
  check(X.ndim() == 3 && Wt.ndim() == 4, "conv2d: bad ranks");
  check(Wt.dim(1) == X.dim(0), "conv2d: channel mismatch");
  if (has_bias) {
    const Tensor<T>& B = t.val(b);
    check(B.ndim() == 1 && B.dim(0) == Wt.dim(0), "conv2d: bias mismatch");
  }
  const int Cin = X.dim(0), H = X.dim(1), W = X.dim(2);
  const int Cout = Wt.dim(0), kh = Wt.dim(2), kw = Wt.dim(3);
  if (pad < 0) pad = kh / 2;  // same-size default for stride 1, odd kernels
  const int Ho = conv_out_dim(H, kh, stride, pad);
  const int Wo = conv_out_dim(W, kw, stride, pad);
  check(Ho > 0 && Wo > 0, "conv2d: empty output");
  const int K = Cin * kh * kw;
  const long ocols = static_cast<long>(Ho) * Wo;

  Tensor<T> col({K, static_cast<int>(ocols)});
  detail::im2col(X, kh, kw, stride, pad, col, Ho, Wo);
  Tensor<T> out({Cout, Ho, Wo});
  detail::MatMap<T>(out.data(), Cout, ocols).noalias() =
      detail::CMatMap<T>(Wt.data(), Cout, K) * detail::CMatMap<T>(col.data(), K, ocols);
  if (has_bias) {
    const Tensor<T>& B = t.val(b);
    for (int c = 0; c < Cout; ++c) {
      T* p = out.data() + static_cast<long>(c) * ocols;
      for (long i = 0; i < ocols; ++i) p[i] += B[c];
    }
  }

  Val o = t.push(std::move(out), t.rg(x) || t.rg(w) || (has_bias && t.rg(b)));
  if (t.rg(o))
    t.node(o).back = [x, w, b, o, stride, pad, Cin, H, W, Cout, kh, kw, Ho, Wo, K,
                      ocols](Tape<T>& tt) {
      const Tensor<T>& G = tt.node(o).grad;
      detail::CMatMap<T> Gm(G.data(), Cout, ocols);
      if (b.ok() && tt.rg(b)) {
        Tensor<T>& gb = tt.grad_buf(b);
        for (int c = 0; c < Cout; ++c) {
          double s = 0.0;
          const T* p = G.data() + static_cast<long>(c) * ocols;
          for (long i = 0; i < ocols; ++i) s += static_cast<double>(p[i]);
          gb[c] += static_cast<T>(s);
        }
      }
      if (tt.rg(w)) {
        Tensor<T> col({K, static_cast<int>(ocols)});
        detail::im2col(tt.val(x), kh, kw, stride, pad, col, Ho, Wo);
        detail::MatMap<T>(tt.grad_buf(w).data(), Cout, K).noalias() +=
            Gm * detail::CMatMap<T>(col.data(), K, ocols).transpose();
      }
      if (tt.rg(x)) {
        Tensor<T> dcol({K, static_cast<int>(ocols)});
        detail::MatMap<T>(dcol.data(), K, ocols).noalias() =
            detail::CMatMap<T>(tt.val(w).data(), Cout, K).transpose() * Gm;
        detail::col2im_acc(dcol, Cin, H, W, kh, kw, stride, pad, tt.grad_buf(x), Ho, Wo);
      }
    };
  return o;
}

// ---------------------------------------------------------------------------
// window partition / merge (pure, exact inverses)
// ---------------------------------------------------------------------------

// [C,H,W] -> [nwin, win*win, C] with windows scanned row-major
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int win) {
  check(x.ndim() == 3, "window_partition: need [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  check(H % win == 0 && W % win == 0, "window_partition: dims not divisible by window");
  const int ny = H / win, nx = W / win;
  Tensor<T> out({ny * nx, win * win, C});
  for (int wy = 0; wy < ny; ++wy)
    for (int wx = 0; wx < nx; ++wx) {
      const int widx = wy * nx + wx;
      for (int py = 0; py < win; ++py)
        for (int px = 0; px < win; ++px) {
          const int p = py * win + px;
          for (int c = 0; c < C; ++c)
            out.at(widx, p, c) = x.at(c, wy * win + py, wx * win + px);
        }
    }
  return out;
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& wins, int win, int C, int H, int W) {
  check(wins.ndim() == 3 && wins.dim(1) == win * win && wins.dim(2) == C,
        "window_merge: bad window tensor");
  check(H % win == 0 && W % win == 0 && wins.dim(0) == (H / win) * (W / win),
        "window_merge: inconsistent target size");
  const int nx = W / win;
  Tensor<T> out({C, H, W});
  for (int widx = 0; widx < wins.dim(0); ++widx) {
    const int wy = widx / nx, wx = widx % nx;
    for (int py = 0; py < win; ++py)
      for (int px = 0; px < win; ++px) {
        const int p = py * win + px;
        for (int c = 0; c < C; ++c)
          out.at(c, wy * win + py, wx * win + px) = wins.at(widx, p, c);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// windowed multi-head scaled dot-product attention
// ---------------------------------------------------------------------------

// q,k,v: [C,H,W]; returns [C,H,W]. Softmax over the win*win pixels of each
// window, independently per window and head. Attention probabilities are kept
// for the backward pass.
template <typename T>
Val window_attention(Tape<T>& t, Val q, Val k, Val v, int win, int heads) {
  const Tensor<T>& Q = t.val(q);
  check(Q.ndim() == 3, "window_attention: need [C,H,W]");
  check(t.val(k).same_shape(Q) && t.val(v).same_shape(Q), "window_attention: shape mismatch");
  const int C = Q.dim(0), H = Q.dim(1), W = Q.dim(2);
  check(C % heads == 0, "window_attention: heads must divide channels");
  check(H % win == 0 && W % win == 0, "window_attention: dims not divisible by window");
  const int dh = C / heads;
  const int P = win * win;
  const int ny = H / win, nx = W / win, nwin = ny * nx;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  // gather [P, dh] blocks for one (window, head)
  auto gather = [&](const Tensor<T>& src, int widx, int head, Tensor<T>& dst) {
    const int wy = widx / nx, wx = widx % nx;
    for (int py = 0; py < win; ++py)
      for (int px = 0; px < win; ++px) {
        const int p = py * win + px;
        for (int d = 0; d < dh; ++d)
          dst.at(p, d) = src.at(head * dh + d, wy * win + py, wx * win + px);
      }
  };

  Tensor<T> out({C, H, W});
  // attention probabilities, [nwin*heads, P, P] flattened
  std::vector<T> probs(static_cast<std::size_t>(nwin) * heads * P * P);

  Tensor<T> qw({P, dh}), kw({P, dh}), vw({P, dh}), ow({P, dh});
  Tensor<T> logits({P, P});
  for (int widx = 0; widx < nwin; ++widx) {
    const int wy = widx / nx, wx = widx % nx;
    for (int h = 0; h < heads; ++h) {
      gather(Q, widx, h, qw);
      gather(t.val(k), widx, h, kw);
      gather(t.val(v), widx, h, vw);
      detail::MatMap<T>(logits.data(), P, P).noalias() =
          (detail::CMatMap<T>(qw.data(), P, dh) *
           detail::CMatMap<T>(kw.data(), P, dh).transpose()) *
          att_scale;
      // row softmax
      T* A = probs.data() + (static_cast<std::size_t>(widx) * heads + h) * P * P;
      for (int r = 0; r < P; ++r) {
        T* row = logits.data() + static_cast<long>(r) * P;
        T mx = row[0];
        for (int c2 = 1; c2 < P; ++c2) mx = std::max(mx, row[c2]);
        double s = 0.0;
        for (int c2 = 0; c2 < P; ++c2) {
          const T e = std::exp(row[c2] - mx);
          A[static_cast<long>(r) * P + c2] = e;
          s += static_cast<double>(e);
        }
        const T inv = static_cast<T>(1.0 / s);
        for (int c2 = 0; c2 < P; ++c2) A[static_cast<long>(r) * P + c2] *= inv;
      }
      detail::MatMap<T>(ow.data(), P, dh).noalias() =
          detail::CMatMap<T>(A, P, P) * detail::CMatMap<T>(vw.data(), P, dh);
      for (int py = 0; py < win; ++py)
        for (int px = 0; px < win; ++px) {
          const int p = py * win + px;
          for (int d = 0; d < dh; ++d)
            out.at(h * dh + d, wy * win + py, wx * win + px) = ow.at(p, d);
        }
    }
  }

  Val o = t.push(std::move(out), t.rg(q) || t.rg(k) || t.rg(v));
  if (t.rg(o))
    t.node(o).back = [q, k, v, o, win, heads, C, H, W, dh, P, ny, nx, nwin, att_scale,
                      probs = std::move(probs)](Tape<T>& tt) {
      const Tensor<T>& G = tt.node(o).grad;
      auto gather2 = [&](const Tensor<T>& src, int widx, int head, Tensor<T>& dst) {
        const int wy = widx / nx, wx = widx % nx;
        for (int py = 0; py < win; ++py)
          for (int px = 0; px < win; ++px) {
            const int p = py * win + px;
            for (int d = 0; d < dh; ++d)
              dst.at(p, d) = src.at(head * dh + d, wy * win + py, wx * win + px);
          }
      };
      auto scatter_acc = [&](Tensor<T>& dst, int widx, int head, const Tensor<T>& blk) {
        const int wy = widx / nx, wx = widx % nx;
        for (int py = 0; py < win; ++py)
          for (int px = 0; px < win; ++px) {
            const int p = py * win + px;
            for (int d = 0; d < dh; ++d)
              dst.at(head * dh + d, wy * win + py, wx * win + px) += blk.at(p, d);
          }
      };
      Tensor<T> qw({P, dh}), kw({P, dh}), vw({P, dh}), go({P, dh});
      Tensor<T> dA({P, P}), dlog({P, P}), blk({P, dh});
      for (int widx = 0; widx < nwin; ++widx) {
        for (int h = 0; h < heads; ++h) {
          const T* A = probs.data() + (static_cast<std::size_t>(widx) * heads + h) * P * P;
          gather2(G, widx, h, go);
          gather2(tt.val(q), widx, h, qw);
          gather2(tt.val(k), widx, h, kw);
          gather2(tt.val(v), widx, h, vw);
          if (tt.rg(v)) {
            detail::MatMap<T>(blk.data(), P, dh).noalias() =
                detail::CMatMap<T>(A, P, P).transpose() * detail::CMatMap<T>(go.data(), P, dh);
            scatter_acc(tt.grad_buf(v), widx, h, blk);
          }
          if (tt.rg(q) || tt.rg(k)) {
            detail::MatMap<T>(dA.data(), P, P).noalias() =
                detail::CMatMap<T>(go.data(), P, dh) *
                detail::CMatMap<T>(vw.data(), P, dh).transpose();
            // softmax backward: dlog = A .* (dA - rowsum(dA .* A))
            for (int r = 0; r < P; ++r) {
              double dot = 0.0;
              for (int c2 = 0; c2 < P; ++c2)
                dot += static_cast<double>(dA.at(r, c2)) *
                       static_cast<double>(A[static_cast<long>(r) * P + c2]);
              for (int c2 = 0; c2 < P; ++c2)
                dlog.at(r, c2) = A[static_cast<long>(r) * P + c2] *
                                 (dA.at(r, c2) - static_cast<T>(dot));
            }
            if (tt.rg(q)) {
              detail::MatMap<T>(blk.data(), P, dh).noalias() =
                  (detail::CMatMap<T>(dlog.data(), P, P) *
                   detail::CMatMap<T>(kw.data(), P, dh)) *
                  att_scale;
              scatter_acc(tt.grad_buf(q), widx, h, blk);
            }
            if (tt.rg(k)) {
              detail::MatMap<T>(blk.data(), P, dh).noalias() =
                  (detail::CMatMap<T>(dlog.data(), P, P).transpose() *
                   detail::CMatMap<T>(qw.data(), P, dh)) *
                  att_scale;
              scatter_acc(tt.grad_buf(k), widx, h, blk);
            }
          }
        }
      }
    };
  return o;
}

// ---------------------------------------------------------------------------
// resampling and padding
// ---------------------------------------------------------------------------

// bilinear upsample by an integer factor, half-pixel centers
template <typename T>
Val upsample_bilinear(Tape<T>& t, Val x, int factor) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3 && factor >= 1, "upsample_bilinear: bad args");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  const int Ho = H * factor, Wo = W * factor;
  // precompute 1D interpolation taps
  struct Tap {
    int i0, i1;
    T w0, w1;
  };
  auto taps = [&](int n_in, int n_out) {
    std::vector<Tap> v(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      double s = (i + 0.5) * n_in / static_cast<double>(n_out) - 0.5;
      s = std::max(0.0, std::min(s, static_cast<double>(n_in - 1)));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, n_in - 1);
      const T f = static_cast<T>(s - i0);
      v[static_cast<std::size_t>(i)] = Tap{i0, i1, T(1) - f, f};
    }
    return v;
  };
  const auto ty = taps(H, Ho), tx = taps(W, Wo);
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int xprime = 0; xprime < Wo; ++xprime) {
        const Tap& b = tx[static_cast<std::size_t>(xprime)];
        out.at(c, y, xprime) = a.w0 * (b.w0 * X.at(c, a.i0, b.i0) + b.w1 * X.at(c, a.i0, b.i1)) +
                               a.w1 * (b.w0 * X.at(c, a.i1, b.i0) + b.w1 * X.at(c, a.i1, b.i1));
      }
    }
  Val o = t.push(std::move(out), t.rg(x));
  if (t.rg(o))
    t.node(o).back = [x, o, C, Ho, Wo, ty, tx](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& gx = tt.grad_buf(x);
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y) {
          const auto& a = ty[static_cast<std::size_t>(y)];
          for (int xprime = 0; xprime < Wo; ++xprime) {
            const auto& b = tx[static_cast<std::size_t>(xprime)];
            const T gv = g.at(c, y, xprime);
            gx.at(c, a.i0, b.i0) += a.w0 * b.w0 * gv;
            gx.at(c, a.i0, b.i1) += a.w0 * b.w1 * gv;
            gx.at(c, a.i1, b.i0) += a.w1 * b.w0 * gv;
            gx.at(c, a.i1, b.i1) += a.w1 * b.w1 * gv;
          }
        }
    };
  return o;
}

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

// reflect padding on the bottom/right only (used to reach window divisibility)
template <typename T>
Val reflect_pad_br(Tape<T>& t, Val x, int pb, int pr) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3 && pb >= 0 && pr >= 0, "reflect_pad_br: bad args");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  check(pb < H && pr < W, "reflect_pad_br: pad too large for reflection");
  if (pb == 0 && pr == 0) return x;
  const int Ho = H + pb, Wo = W + pr;
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y) {
      const int sy = reflect_index(y, H);
      for (int xx = 0; xx < Wo; ++xx) out.at(c, y, xx) = X.at(c, sy, reflect_index(xx, W));
    }
  Val o = t.push(std::move(out), t.rg(x));
  if (t.rg(o))
    t.node(o).back = [x, o, C, H, W, Ho, Wo](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& gx = tt.grad_buf(x);
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y) {
          const int sy = reflect_index(y, H);
          for (int xx = 0; xx < Wo; ++xx) gx.at(c, sy, reflect_index(xx, W)) += g.at(c, y, xx);
        }
    };
  return o;
}

template <typename T>
Val crop(Tape<T>& t, Val x, int h, int w) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3 && h <= X.dim(1) && w <= X.dim(2), "crop: bad target");
  if (h == X.dim(1) && w == X.dim(2)) return x;
  const int C = X.dim(0);
  Tensor<T> out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = X.at(c, y, xx);
  Val o = t.push(std::move(out), t.rg(x));
  if (t.rg(o))
    t.node(o).back = [x, o, C, h, w](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& gx = tt.grad_buf(x);
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) gx.at(c, y, xx) += g.at(c, y, xx);
    };
  return o;
}

// cyclic shift; exact inverse is roll2d(x, -dy, -dx)
template <typename T>
Val roll2d(Tape<T>& t, Val x, int dy, int dx) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3, "roll2d: need [C,H,W]");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        out.at(c, y, xx) = X.at(c, wrap(y - dy, H), wrap(xx - dx, W));
  Val o = t.push(std::move(out), t.rg(x));
  if (t.rg(o))
    t.node(o).back = [x, o, C, H, W, dy, dx, wrap](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& gx = tt.grad_buf(x);
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            gx.at(c, wrap(y - dy, H), wrap(xx - dx, W)) += g.at(c, y, xx);
    };
  return o;
}

}  // namespace s2ml
