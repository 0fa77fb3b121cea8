#pragma once

// 2D Fourier ops on [C,H,W] feature maps. The forward transform is
// unnormalized, the inverse carries the 1/(H*W) factor, and the DC bin sits
// at (0,0). Transforms are evaluated as dense matrix products against
// per-axis cosine/sine matrices, which keeps them exact for any size and
// makes the tape versions plain matmul compositions.

#include <cmath>
#include <utility>

#include "s2ml/autodiff.hpp"
#include "s2ml/tensor.hpp"

namespace s2ml {

template <typename T>
struct ComplexSpectrum {
  Tensor<T> real;
  Tensor<T> imag;
};

template <typename T>
struct PolarSpectrum {
  Tensor<T> amplitude;  // >= 0
  Tensor<T> phase;      // in (-pi, pi], 0 where amplitude is 0
};

struct LowFreqMask {
  Tensor<double> mask;  // [H,W], entries in {0,1}
  double rho = 0.25;
  double alpha = 0.5;
};

namespace detail {

// F[u][n] = cos(2*pi*u*n/N) and sin(2*pi*u*n/N); both symmetric
template <typename T>
std::pair<Tensor<T>, Tensor<T>> dft_matrices(int n) {
  Tensor<T> c({n, n}), s({n, n});
  const double w = 2.0 * 3.14159265358979323846 / n;
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) {
      // reduce u*v mod n first so large products keep full precision
      const long k = (static_cast<long>(u) * v) % n;
      c.at(u, v) = static_cast<T>(std::cos(w * static_cast<double>(k)));
      s.at(u, v) = static_cast<T>(std::sin(w * static_cast<double>(k)));
    }
  return {std::move(c), std::move(s)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pure (tape-free) operations
// ---------------------------------------------------------------------------

template <typename T>
ComplexSpectrum<T> dft2(const Tensor<T>& x) {
  check(x.ndim() == 3 && x.dim(1) >= 2 && x.dim(2) >= 2, "dft2: need [C,H>=2,W>=2]");
  check(x.all_finite(), "dft2: non-finite input");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto [cw, sw] = detail::dft_matrices<T>(W);
  auto [ch, sh] = detail::dft_matrices<T>(H);
  Tensor<T> re1({C, H, W}), im1({C, H, W});
  for (int c = 0; c < C; ++c) {
    const long off = static_cast<long>(c) * H * W;
    detail::MatMap<T>(re1.data() + off, H, W).noalias() =
        detail::CMatMap<T>(x.data() + off, H, W) * detail::CMatMap<T>(cw.data(), W, W);
    detail::MatMap<T>(im1.data() + off, H, W).noalias() =
        -(detail::CMatMap<T>(x.data() + off, H, W) * detail::CMatMap<T>(sw.data(), W, W));
  }
  ComplexSpectrum<T> out{Tensor<T>({C, H, W}), Tensor<T>({C, H, W})};
  for (int c = 0; c < C; ++c) {
    const long off = static_cast<long>(c) * H * W;
    detail::MatMap<T>(out.real.data() + off, H, W).noalias() =
        detail::CMatMap<T>(ch.data(), H, H) * detail::CMatMap<T>(re1.data() + off, H, W) +
        detail::CMatMap<T>(sh.data(), H, H) * detail::CMatMap<T>(im1.data() + off, H, W);
    detail::MatMap<T>(out.imag.data() + off, H, W).noalias() =
        detail::CMatMap<T>(ch.data(), H, H) * detail::CMatMap<T>(im1.data() + off, H, W) -
        detail::CMatMap<T>(sh.data(), H, H) * detail::CMatMap<T>(re1.data() + off, H, W);
  }
  return out;
}

template <typename T>
Tensor<T> idft2(const ComplexSpectrum<T>& s) {
  check(s.real.ndim() == 3, "idft2: need [C,H,W]");
  check(s.real.same_shape(s.imag), "idft2: real/imag shape mismatch");
  check(s.real.all_finite() && s.imag.all_finite(), "idft2: non-finite input");
  const int C = s.real.dim(0), H = s.real.dim(1), W = s.real.dim(2);
  auto [cw, sw] = detail::dft_matrices<T>(W);
  auto [ch, sh] = detail::dft_matrices<T>(H);
  Tensor<T> re1({C, H, W}), im1({C, H, W});
  for (int c = 0; c < C; ++c) {
    const long off = static_cast<long>(c) * H * W;
    detail::MatMap<T>(re1.data() + off, H, W).noalias() =
        detail::CMatMap<T>(ch.data(), H, H) * detail::CMatMap<T>(s.real.data() + off, H, W) -
        detail::CMatMap<T>(sh.data(), H, H) * detail::CMatMap<T>(s.imag.data() + off, H, W);
    detail::MatMap<T>(im1.data() + off, H, W).noalias() =
        detail::CMatMap<T>(ch.data(), H, H) * detail::CMatMap<T>(s.imag.data() + off, H, W) +
        detail::CMatMap<T>(sh.data(), H, H) * detail::CMatMap<T>(s.real.data() + off, H, W);
  }
  Tensor<T> out({C, H, W});
  const T norm = static_cast<T>(1.0 / (static_cast<double>(H) * W));
  for (int c = 0; c < C; ++c) {
    const long off = static_cast<long>(c) * H * W;
    detail::MatMap<T>(out.data() + off, H, W).noalias() =
        (detail::CMatMap<T>(re1.data() + off, H, W) * detail::CMatMap<T>(cw.data(), W, W) -
         detail::CMatMap<T>(im1.data() + off, H, W) * detail::CMatMap<T>(sw.data(), W, W)) *
        norm;
  }
  return out;
}

template <typename T>
PolarSpectrum<T> decompose(const ComplexSpectrum<T>& s) {
  check(s.real.same_shape(s.imag), "decompose: real/imag shape mismatch");
  check(s.real.all_finite() && s.imag.all_finite(), "decompose: non-finite input");
  PolarSpectrum<T> p{Tensor<T>(s.real.shape()), Tensor<T>(s.real.shape())};
  const T pi = static_cast<T>(3.14159265358979323846);
  for (long i = 0; i < s.real.numel(); ++i) {
    const T r = s.real[i], m = s.imag[i];
    const T a = std::sqrt(r * r + m * m);
    p.amplitude[i] = a;
    T ph = (a == T(0)) ? T(0) : std::atan2(m, r);
    if (ph == -pi) ph = pi;  // -pi and pi are the same angle; keep (-pi, pi]
    p.phase[i] = ph;
  }
  return p;
}

template <typename T>
ComplexSpectrum<T> recompose(const PolarSpectrum<T>& p) {
  check(p.amplitude.same_shape(p.phase), "recompose: amplitude/phase shape mismatch");
  for (long i = 0; i < p.amplitude.numel(); ++i)
    check(p.amplitude[i] >= T(0), "recompose: negative amplitude");
  ComplexSpectrum<T> s{Tensor<T>(p.amplitude.shape()), Tensor<T>(p.amplitude.shape())};
  for (long i = 0; i < p.amplitude.numel(); ++i) {
    s.real[i] = p.amplitude[i] * std::cos(p.phase[i]);
    s.imag[i] = p.amplitude[i] * std::sin(p.phase[i]);
  }
  return s;
}

// Binary disk of radius rho*min(H,W)/2 around DC, in wrap-around frequency
// distance (no fftshift).
inline LowFreqMask make_lowfreq_mask(int H, int W, double rho, double alpha) {
  check(H >= 2 && W >= 2, "make_lowfreq_mask: H,W >= 2 required");
  check(rho >= 0.0 && rho <= 1.0, "make_lowfreq_mask: rho must be in [0,1]");
  check(alpha > 0.0 && std::isfinite(alpha), "make_lowfreq_mask: alpha must be positive");
  LowFreqMask m{Tensor<double>({H, W}), rho, alpha};
  const double radius = rho * std::min(H, W) / 2.0;
  for (int u = 0; u < H; ++u) {
    const int du = std::min(u, H - u);
    for (int v = 0; v < W; ++v) {
      const int dv = std::min(v, W - v);
      const double d = std::sqrt(static_cast<double>(du) * du + static_cast<double>(dv) * dv);
      m.mask.at(u, v) = (d <= radius) ? 1.0 : 0.0;
    }
  }
  return m;
}

// (low, high) spectral energy split by the mask; summed over channels,
// accumulated in double
template <typename T>
std::pair<double, double> band_energy(const PolarSpectrum<T>& p, const LowFreqMask& m) {
  check(p.amplitude.ndim() == 3, "band_energy: need [C,H,W]");
  check(p.amplitude.dim(1) == m.mask.dim(0) && p.amplitude.dim(2) == m.mask.dim(1),
        "band_energy: mask size mismatch");
  const int C = p.amplitude.dim(0), H = p.amplitude.dim(1), W = p.amplitude.dim(2);
  double low = 0.0, high = 0.0;
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < H; ++u)
      for (int v = 0; v < W; ++v) {
        const double a = static_cast<double>(p.amplitude.at(c, u, v));
        (m.mask.at(u, v) != 0.0 ? low : high) += a * a;
      }
  return {low, high};
}

// ---------------------------------------------------------------------------
// tape (differentiable) versions
// ---------------------------------------------------------------------------

struct SpecVal {
  Val real;
  Val imag;
};

template <typename T>
SpecVal dft2_t(Tape<T>& t, Val x) {
  const Tensor<T>& X = t.val(x);
  check(X.ndim() == 3, "dft2_t: need [C,H,W]");
  const int H = X.dim(1), W = X.dim(2);
  auto [cw, sw] = detail::dft_matrices<T>(W);
  auto [ch, sh] = detail::dft_matrices<T>(H);
  Val re1 = mmul_right_const(t, x, cw);
  Val im1 = scale(t, mmul_right_const(t, x, sw), T(-1));
  Val re = add(t, mmul_left_const(t, ch, re1), mmul_left_const(t, sh, im1));
  Val im = sub(t, mmul_left_const(t, ch, im1), mmul_left_const(t, sh, re1));
  return {re, im};
}

template <typename T>
Val idft2_t(Tape<T>& t, SpecVal s) {
  const Tensor<T>& R = t.val(s.real);
  check(R.same_shape(t.val(s.imag)), "idft2_t: real/imag shape mismatch");
  const int H = R.dim(1), W = R.dim(2);
  auto [cw, sw] = detail::dft_matrices<T>(W);
  auto [ch, sh] = detail::dft_matrices<T>(H);
  Val re1 = sub(t, mmul_left_const(t, ch, s.real), mmul_left_const(t, sh, s.imag));
  Val im1 = add(t, mmul_left_const(t, ch, s.imag), mmul_left_const(t, sh, s.real));
  Val out = sub(t, mmul_right_const(t, re1, cw), mmul_right_const(t, im1, sw));
  return scale(t, out, static_cast<T>(1.0 / (static_cast<double>(H) * W)));
}

// polar pair on the tape; see complex_to_polar for the zero-bin convention
template <typename T>
std::pair<Val, Val> decompose_t(Tape<T>& t, SpecVal s) {
  return complex_to_polar(t, s.real, s.imag);
}

template <typename T>
SpecVal recompose_t(Tape<T>& t, Val amplitude, Val phase) {
  Val re = mul(t, amplitude, cos_val(t, phase));
  Val im = mul(t, amplitude, sin_val(t, phase));
  return {re, im};
}

}  // namespace s2ml
