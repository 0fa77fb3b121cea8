#pragma once

// Reverse-mode autodiff on a single-use tape. Ops are free functions taking
// Tape<T>&; heavy kernels (matmul and friends) run through Eigen maps.
// Gradients are only computed for nodes reachable from a requires-grad leaf.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "s2ml/tensor.hpp"

namespace s2ml {

struct Val {
  int i = -1;
  bool ok() const { return i >= 0; }
};

template <typename T>
class Tape {
 public:
  using Back = std::function<void(Tape<T>&)>;
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first touch during backward
    Back back;
    bool rg = false;
  };

  Val leaf(Tensor<T> v, bool requires_grad = false) {
    return push(std::move(v), requires_grad);
  }

  Val push(Tensor<T> v, bool rg) {
    // grad buffers are eager for requires-grad nodes so multi-output
    // backward closures can always read both outputs' gradients
    Tensor<T> g = rg ? Tensor<T>(v.shape()) : Tensor<T>();
    nodes_.push_back(Node{std::move(v), std::move(g), nullptr, rg});
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Val v) { return nodes_[static_cast<std::size_t>(v.i)]; }
  const Node& node(Val v) const { return nodes_[static_cast<std::size_t>(v.i)]; }

  const Tensor<T>& val(Val v) const { return node(v).val; }
  bool rg(Val v) const { return node(v).rg; }

  Tensor<T>& grad_buf(Val v) {
    Node& n = node(v);
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.val.shape());
    return n.grad;
  }

  // Gradient of the last backward() target with respect to node v.
  const Tensor<T>& grad(Val v) {
    return grad_buf(v);
  }

  void backward(Val loss) {
    check(val(loss).numel() == 1, "backward: loss must be scalar");
    check(rg(loss), "backward: loss does not depend on any parameter");
    grad_buf(loss)[0] = T(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.rg && n.back) n.back(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
void acc_all(Tensor<T>& dst, const Tensor<T>& src) {
  for (long i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Val add(Tape<T>& t, Val a, Val b) {
  check(t.val(a).same_shape(t.val(b)), "add: shape mismatch");
  Tensor<T> out(t.val(a).shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = t.val(a)[i] + t.val(b)[i];
  Val o = t.push(std::move(out), t.rg(a) || t.rg(b));
  if (t.rg(o))
    t.node(o).back = [a, b, o](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      if (tt.rg(a)) detail::acc_all(tt.grad_buf(a), g);
      if (tt.rg(b)) detail::acc_all(tt.grad_buf(b), g);
    };
  return o;
}

template <typename T>
Val sub(Tape<T>& t, Val a, Val b) {
  check(t.val(a).same_shape(t.val(b)), "sub: shape mismatch");
  Tensor<T> out(t.val(a).shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = t.val(a)[i] - t.val(b)[i];
  Val o = t.push(std::move(out), t.rg(a) || t.rg(b));
  if (t.rg(o))
    t.node(o).back = [a, b, o](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      if (tt.rg(a)) detail::acc_all(tt.grad_buf(a), g);
      if (tt.rg(b)) {
        Tensor<T>& gb = tt.grad_buf(b);
        for (long i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
      }
    };
  return o;
}

template <typename T>
Val mul(Tape<T>& t, Val a, Val b) {
  check(t.val(a).same_shape(t.val(b)), "mul: shape mismatch");
  Tensor<T> out(t.val(a).shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = t.val(a)[i] * t.val(b)[i];
  Val o = t.push(std::move(out), t.rg(a) || t.rg(b));
  if (t.rg(o))
    t.node(o).back = [a, b, o](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      if (tt.rg(a)) {
        Tensor<T>& ga = tt.grad_buf(a);
        const Tensor<T>& vb = tt.val(b);
        for (long i = 0; i < ga.numel(); ++i) ga[i] += g[i] * vb[i];
      }
      if (tt.rg(b)) {
        Tensor<T>& gb = tt.grad_buf(b);
        const Tensor<T>& va = tt.val(a);
        for (long i = 0; i < gb.numel(); ++i) gb[i] += g[i] * va[i];
      }
    };
  return o;
}

template <typename T>
Val scale(Tape<T>& t, Val a, T s) {
  Tensor<T> out(t.val(a).shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = t.val(a)[i] * s;
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, s](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& ga = tt.grad_buf(a);
      for (long i = 0; i < ga.numel(); ++i) ga[i] += g[i] * s;
    };
  return o;
}

// elementwise multiply by a constant tensor (no gradient into the constant)
template <typename T>
Val mul_const(Tape<T>& t, Val a, const Tensor<T>& c) {
  check(t.val(a).same_shape(c), "mul_const: shape mismatch");
  Tensor<T> out(c.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = t.val(a)[i] * c[i];
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, c](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& ga = tt.grad_buf(a);
      for (long i = 0; i < ga.numel(); ++i) ga[i] += g[i] * c[i];
    };
  return o;
}

template <typename T, typename FwdFn, typename DerivFn>
Val unary_op(Tape<T>& t, Val a, FwdFn f, DerivFn df) {
  const Tensor<T>& x = t.val(a);
  Tensor<T> out(x.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = f(x[i]);
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, df](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      const Tensor<T>& x = tt.val(a);
      const Tensor<T>& y = tt.val(o);
      Tensor<T>& ga = tt.grad_buf(a);
      for (long i = 0; i < ga.numel(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    };
  return o;
}

template <typename T>
Val relu(Tape<T>& t, Val a) {
  return unary_op(
      t, a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Val sigmoid(Tape<T>& t, Val a) {
  return unary_op(
      t, a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Val abs_val(Tape<T>& t, Val a) {
  // subgradient 0 at the kink
  return unary_op(
      t, a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Val sin_val(Tape<T>& t, Val a) {
  return unary_op(
      t, a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Val cos_val(Tape<T>& t, Val a) {
  return unary_op(
      t, a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

// wrap to (-pi, pi]; derivative is 1 away from the jump
template <typename T>
T wrap_angle(T x) {
  const T pi = static_cast<T>(3.14159265358979323846);
  T w = static_cast<T>(std::remainder(static_cast<double>(x), 2.0 * 3.14159265358979323846));
  if (w <= -pi) w += T(2) * pi;
  return w;
}

template <typename T>
Val wrap_phase(Tape<T>& t, Val a) {
  return unary_op(
      t, a, [](T x) { return wrap_angle(x); }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Val sum_all(Tape<T>& t, Val a) {
  // accumulate in double regardless of T
  double s = 0.0;
  const Tensor<T>& x = t.val(a);
  for (long i = 0; i < x.numel(); ++i) s += static_cast<double>(x[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(s);
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o](Tape<T>& tt) {
      const T g = tt.node(o).grad[0];
      Tensor<T>& ga = tt.grad_buf(a);
      for (long i = 0; i < ga.numel(); ++i) ga[i] += g;
    };
  return o;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

// out[m,n] = a[m,k] * b[k,n]
template <typename T>
Val matmul(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& A = t.val(a);
  const Tensor<T>& B = t.val(b);
  check(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(0), "matmul: bad shapes");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> out({m, n});
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::CMatMap<T>(A.data(), m, k) * detail::CMatMap<T>(B.data(), k, n);
  Val o = t.push(std::move(out), t.rg(a) || t.rg(b));
  if (t.rg(o))
    t.node(o).back = [a, b, o, m, k, n](Tape<T>& tt) {
      detail::CMatMap<T> G(tt.node(o).grad.data(), m, n);
      if (tt.rg(a)) {
        detail::MatMap<T> GA(tt.grad_buf(a).data(), m, k);
        GA.noalias() += G * detail::CMatMap<T>(tt.val(b).data(), k, n).transpose();
      }
      if (tt.rg(b)) {
        detail::MatMap<T> GB(tt.grad_buf(b).data(), k, n);
        GB.noalias() += detail::CMatMap<T>(tt.val(a).data(), m, k).transpose() * G;
      }
    };
  return o;
}

// per-channel left product with a constant matrix: out[c] = M * x[c]
// x: [C,H,W], M: [H,H]
template <typename T>
Val mmul_left_const(Tape<T>& t, const Tensor<T>& M, Val x) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3 && M.ndim() == 2 && M.dim(0) == X.dim(1) && M.dim(1) == X.dim(1),
        "mmul_left_const: bad shapes");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c) {
    detail::MatMap<T>(out.data() + static_cast<long>(c) * H * W, H, W).noalias() =
        detail::CMatMap<T>(M.data(), H, H) *
        detail::CMatMap<T>(X.data() + static_cast<long>(c) * H * W, H, W);
  }
  Val o = t.push(std::move(out), t.rg(x));
  if (t.rg(o))
    t.node(o).back = [x, o, M, C, H, W](Tape<T>& tt) {
      Tensor<T>& gx = tt.grad_buf(x);
      const Tensor<T>& g = tt.node(o).grad;
      for (int c = 0; c < C; ++c) {
        detail::MatMap<T>(gx.data() + static_cast<long>(c) * H * W, H, W).noalias() +=
            detail::CMatMap<T>(M.data(), H, H).transpose() *
            detail::CMatMap<T>(g.data() + static_cast<long>(c) * H * W, H, W);
      }
    };
  return o;
}

// per-channel right product with a constant matrix: out[c] = x[c] * M
// x: [C,H,W], M: [W,W]
template <typename T>
Val mmul_right_const(Tape<T>& t, Val x, const Tensor<T>& M) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3 && M.ndim() == 2 && M.dim(0) == X.dim(2) && M.dim(1) == X.dim(2),
        "mmul_right_const: bad shapes");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c) {
    detail::MatMap<T>(out.data() + static_cast<long>(c) * H * W, H, W).noalias() =
        detail::CMatMap<T>(X.data() + static_cast<long>(c) * H * W, H, W) *
        detail::CMatMap<T>(M.data(), W, W);
  }
  Val o = t.push(std::move(out), t.rg(x));
  if (t.rg(o))
    t.node(o).back = [x, o, M, C, H, W](Tape<T>& tt) {
      Tensor<T>& gx = tt.grad_buf(x);
      const Tensor<T>& g = tt.node(o).grad;
      for (int c = 0; c < C; ++c) {
        detail::MatMap<T>(gx.data() + static_cast<long>(c) * H * W, H, W).noalias() +=
            detail::CMatMap<T>(g.data() + static_cast<long>(c) * H * W, H, W) *
            detail::CMatMap<T>(M.data(), W, W).transpose();
      }
    };
  return o;
}

// ---------------------------------------------------------------------------
// channel ops
// ---------------------------------------------------------------------------

template <typename T>
Val concat_c(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& A = t.val(a);
  const Tensor<T>& B = t.val(b);
  check(A.ndim() == 3 && B.ndim() == 3 && A.dim(1) == B.dim(1) && A.dim(2) == B.dim(2),
        "concat_c: spatial dims mismatch");
  const int Ca = A.dim(0), Cb = B.dim(0), H = A.dim(1), W = A.dim(2);
  Tensor<T> out({Ca + Cb, H, W});
  const long plane = static_cast<long>(H) * W;
  std::copy(A.data(), A.data() + Ca * plane, out.data());
  std::copy(B.data(), B.data() + Cb * plane, out.data() + Ca * plane);
  Val o = t.push(std::move(out), t.rg(a) || t.rg(b));
  if (t.rg(o))
    t.node(o).back = [a, b, o, Ca, Cb, plane](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      if (tt.rg(a)) {
        Tensor<T>& ga = tt.grad_buf(a);
        for (long i = 0; i < Ca * plane; ++i) ga[i] += g[i];
      }
      if (tt.rg(b)) {
        Tensor<T>& gb = tt.grad_buf(b);
        for (long i = 0; i < Cb * plane; ++i) gb[i] += g[Ca * plane + i];
      }
    };
  return o;
}

template <typename T>
Val slice_c(Tape<T>& t, Val a, int c0, int c1) {
  const Tensor<T>& A = t.val(a);
  check(A.ndim() == 3 && 0 <= c0 && c0 < c1 && c1 <= A.dim(0), "slice_c: bad range");
  const int H = A.dim(1), W = A.dim(2);
  const long plane = static_cast<long>(H) * W;
  Tensor<T> out({c1 - c0, H, W});
  std::copy(A.data() + c0 * plane, A.data() + c1 * plane, out.data());
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, c0, plane](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& ga = tt.grad_buf(a);
      for (long i = 0; i < g.numel(); ++i) ga[c0 * plane + i] += g[i];
    };
  return o;
}

template <typename T>
Val channel_mean(Tape<T>& t, Val a) {
  const Tensor<T>& A = t.val(a);
  check(A.ndim() == 3, "channel_mean: need [C,H,W]");
  const int C = A.dim(0), H = A.dim(1), W = A.dim(2);
  const long plane = static_cast<long>(H) * W;
  Tensor<T> out({1, H, W});
  for (long p = 0; p < plane; ++p) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += static_cast<double>(A[c * plane + p]);
    out[p] = static_cast<T>(s / C);
  }
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, C, plane](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& ga = tt.grad_buf(a);
      const T inv = T(1) / static_cast<T>(C);
      for (int c = 0; c < C; ++c)
        for (long p = 0; p < plane; ++p) ga[c * plane + p] += g[p] * inv;
    };
  return o;
}

template <typename T>
Val channel_max(Tape<T>& t, Val a) {
  const Tensor<T>& A = t.val(a);
  check(A.ndim() == 3, "channel_max: need [C,H,W]");
  const int C = A.dim(0), H = A.dim(1), W = A.dim(2);
  const long plane = static_cast<long>(H) * W;
  Tensor<T> out({1, H, W});
  std::vector<int> arg(static_cast<std::size_t>(plane), 0);
  for (long p = 0; p < plane; ++p) {
    T best = A[p];
    int bi = 0;
    for (int c = 1; c < C; ++c)
      if (A[c * plane + p] > best) {
        best = A[c * plane + p];
        bi = c;
      }
    out[p] = best;
    arg[static_cast<std::size_t>(p)] = bi;
  }
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, plane, arg = std::move(arg)](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& ga = tt.grad_buf(a);
      for (long p = 0; p < plane; ++p)
        ga[arg[static_cast<std::size_t>(p)] * plane + p] += g[p];
    };
  return o;
}

// broadcast a [1,H,W] map to [C,H,W]
template <typename T>
Val broadcast_c(Tape<T>& t, Val a, int C) {
  const Tensor<T>& A = t.val(a);
  check(A.ndim() == 3 && A.dim(0) == 1, "broadcast_c: need [1,H,W]");
  const int H = A.dim(1), W = A.dim(2);
  const long plane = static_cast<long>(H) * W;
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c) std::copy(A.data(), A.data() + plane, out.data() + c * plane);
  Val o = t.push(std::move(out), t.rg(a));
  if (t.rg(o))
    t.node(o).back = [a, o, C, plane](Tape<T>& tt) {
      const Tensor<T>& g = tt.node(o).grad;
      Tensor<T>& ga = tt.grad_buf(a);
      for (int c = 0; c < C; ++c)
        for (long p = 0; p < plane; ++p) ga[p] += g[c * plane + p];
    };
  return o;
}

// ---------------------------------------------------------------------------
// amplitude/phase from a complex pair; zero bins get (0, 0)
// ---------------------------------------------------------------------------

template <typename T>
std::pair<Val, Val> complex_to_polar(Tape<T>& t, Val re, Val im) {
  const Tensor<T>& R = t.val(re);
  const Tensor<T>& I = t.val(im);
  check(R.same_shape(I), "complex_to_polar: shape mismatch");
  Tensor<T> amp(R.shape()), ph(R.shape());
  const T pi = static_cast<T>(3.14159265358979323846);
  for (long i = 0; i < R.numel(); ++i) {
    const T r = R[i], m = I[i];
    const T a = std::sqrt(r * r + m * m);
    amp[i] = a;
    T p = (a == T(0)) ? T(0) : std::atan2(m, r);
    if (p == -pi) p = pi;  // keep phases in (-pi, pi]
    ph[i] = p;
  }
  const bool rg = t.rg(re) || t.rg(im);
  Val va = t.push(std::move(amp), rg);
  Val vp = t.push(std::move(ph), rg);
  if (rg) {
    // joint backward attached to the earlier node: by the time it runs, both
    // outputs have received all downstream gradients
    t.node(va).back = [re, im, va, vp](Tape<T>& tt) {
      const Tensor<T>& ga = tt.node(va).grad;
      const Tensor<T>* gp = tt.node(vp).grad.numel() ? &tt.node(vp).grad : nullptr;
      const Tensor<T>& R = tt.val(re);
      const Tensor<T>& I = tt.val(im);
      const Tensor<T>& A = tt.val(va);
      Tensor<T>* gre = tt.rg(re) ? &tt.grad_buf(re) : nullptr;
      Tensor<T>* gim = tt.rg(im) ? &tt.grad_buf(im) : nullptr;
      for (long i = 0; i < R.numel(); ++i) {
        const T a = A[i];
        if (a == T(0)) continue;  // subgradient 0 at the singular bin
        const T r = R[i], m = I[i];
        const T inv_a = T(1) / a;
        const T inv_a2 = inv_a * inv_a;
        const T gamp = ga.numel() ? ga[i] : T(0);
        const T gph = gp ? (*gp)[i] : T(0);
        if (gre) (*gre)[i] += gamp * r * inv_a + gph * (-m * inv_a2);
        if (gim) (*gim)[i] += gamp * m * inv_a + gph * (r * inv_a2);
      }
    };
  }
  return {va, vp};
}

}  // namespace s2ml
