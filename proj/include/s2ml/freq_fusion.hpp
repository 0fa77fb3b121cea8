#pragma once

// Frequency fusion: spectrum differencing, low-frequency amplitude rescaling
// with band-wise fusion, difference-phase attention, and fused-spectrum
// reconstruction. Also hosts the spectral ablation variants (V2..V5); the
// spatial-MLP replacement (V1) lives here too since it swaps this module out.

#include <string>
#include <utility>

#include "s2ml/nn_ops.hpp"
#include "s2ml/params.hpp"
#include "s2ml/spectra.hpp"

namespace s2ml {

enum class Variant { full, v1, v2, v3, v4, v5 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::v1: return "V1";
    case Variant::v2: return "V2";
    case Variant::v3: return "V3";
    case Variant::v4: return "V4";
    case Variant::v5: return "V5";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "full" || s == "S2ML") return Variant::full;
  if (s == "V1" || s == "v1") return Variant::v1;
  if (s == "V2" || s == "v2") return Variant::v2;
  if (s == "V3" || s == "v3") return Variant::v3;
  if (s == "V4" || s == "v4") return Variant::v4;
  if (s == "V5" || s == "v5") return Variant::v5;
  fail("unknown variant: " + s);
}

template <typename T>
struct SpectrumDiff {
  Tensor<T> phase_sub;
  Tensor<T> amp_sub;
};

// |phi_depth - phi_rgb| and |A_depth - A_rgb|, element-wise
template <typename T>
SpectrumDiff<T> spectrum_difference(const PolarSpectrum<T>& depth, const PolarSpectrum<T>& rgb) {
  check(depth.amplitude.same_shape(rgb.amplitude) && depth.phase.same_shape(rgb.phase),
        "spectrum_difference: shape mismatch");
  SpectrumDiff<T> d{Tensor<T>(depth.phase.shape()), Tensor<T>(depth.amplitude.shape())};
  for (long i = 0; i < d.phase_sub.numel(); ++i)
    d.phase_sub[i] = std::abs(depth.phase[i] - rgb.phase[i]);
  for (long i = 0; i < d.amp_sub.numel(); ++i)
    d.amp_sub[i] = std::abs(depth.amplitude[i] - rgb.amplitude[i]);
  return d;
}

// A* = alpha*M*A + (1-M)*A, M broadcast over channels
template <typename T>
Tensor<T> rescale_lowfreq(const Tensor<T>& amp, const LowFreqMask& m) {
  check(amp.ndim() == 3 && amp.dim(1) == m.mask.dim(0) && amp.dim(2) == m.mask.dim(1),
        "rescale_lowfreq: mask size mismatch");
  Tensor<T> out(amp.shape());
  const long plane = static_cast<long>(amp.dim(1)) * amp.dim(2);
  for (int c = 0; c < amp.dim(0); ++c)
    for (long p = 0; p < plane; ++p) {
      const double mm = m.mask[p];
      out[c * plane + p] =
          static_cast<T>((m.alpha * mm + (1.0 - mm)) * static_cast<double>(amp[c * plane + p]));
    }
  return out;
}

// the same rescale as a tape op (multiplication by a constant weight plane)
template <typename T>
Val rescale_lowfreq_t(Tape<T>& t, Val amp, const LowFreqMask& m) {
  const Tensor<T>& A = t.val(amp);
  check(A.ndim() == 3 && A.dim(1) == m.mask.dim(0) && A.dim(2) == m.mask.dim(1),
        "rescale_lowfreq_t: mask size mismatch");
  Tensor<T> weight(A.shape());
  const long plane = static_cast<long>(A.dim(1)) * A.dim(2);
  for (int c = 0; c < A.dim(0); ++c)
    for (long p = 0; p < plane; ++p)
      weight[c * plane + p] = static_cast<T>(m.alpha * m.mask[p] + (1.0 - m.mask[p]));
  return mul_const(t, amp, weight);
}

template <typename T>
class FreqFusionModule {
 public:
  static FreqFusionModule create(ParamStore<T>& store, const std::string& prefix, int channels,
                                 Variant variant, bool per_channel_phase_attn, Rng& rng) {
    FreqFusionModule m;
    m.channels_ = channels;
    m.variant_ = variant;
    m.per_channel_attn_ = per_channel_phase_attn;
    auto he = [&rng](std::vector<int> shape, int fan_in) {
      return randn<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in));
    };
    const int C = channels;
    switch (variant) {
      case Variant::full:
      case Variant::v3:
      case Variant::v4: {
        // a removed path keeps no parameters, so V3 < full in parameter count
        if (variant != Variant::v3) {
          m.amp_w_ = store.add(prefix + ".amp_fuse.w", he({C, 2 * C, 1, 1}, 2 * C));
          m.amp_b_ = store.add(prefix + ".amp_fuse.b", Tensor<T>({C}));
        }
        if (variant != Variant::v4) {
          const int attn_out = per_channel_phase_attn ? C : 1;
          m.phase_w_ = store.add(prefix + ".phase_attn.w", he({attn_out, 2, 7, 7}, 2 * 7 * 7));
          m.phase_b_ = store.add(prefix + ".phase_attn.b", Tensor<T>({attn_out}));
        }
        break;
      }
      case Variant::v1: {
        m.mlp1_w_ = store.add(prefix + ".mlp1.w", he({2 * C, 2 * C, 1, 1}, 2 * C));
        m.mlp1_b_ = store.add(prefix + ".mlp1.b", Tensor<T>({2 * C}));
        m.mlp2_w_ = store.add(prefix + ".mlp2.w", he({C, 2 * C, 1, 1}, 2 * C));
        m.mlp2_b_ = store.add(prefix + ".mlp2.b", Tensor<T>({C}));
        break;
      }
      case Variant::v2: {
        m.mlp1_w_ = store.add(prefix + ".mlp1.w", he({2 * C, 4 * C, 1, 1}, 4 * C));
        m.mlp1_b_ = store.add(prefix + ".mlp1.b", Tensor<T>({2 * C}));
        m.mlp2_w_ = store.add(prefix + ".mlp2.w", he({2 * C, 2 * C, 1, 1}, 2 * C));
        m.mlp2_b_ = store.add(prefix + ".mlp2.b", Tensor<T>({2 * C}));
        break;
      }
      case Variant::v5: {
        m.amp_w_ = store.add(prefix + ".v5_amp.w", he({C, 2 * C, 1, 1}, 2 * C));
        m.amp_b_ = store.add(prefix + ".v5_amp.b", Tensor<T>({C}));
        m.phase_w_ = store.add(prefix + ".v5_phase.w", he({C, 2 * C, 1, 1}, 2 * C));
        m.phase_b_ = store.add(prefix + ".v5_phase.b", Tensor<T>({C}));
        break;
      }
    }
    return m;
  }

  Variant variant() const { return variant_; }

  // A_f = clamp0(f_c(cat(A_depth*, A_sub*)) + A_depth); residual from the
  // un-rescaled depth amplitude
  Val fuse_amplitude(Tape<T>& t, const BoundParams<T>& bp, Val amp_depth_star, Val amp_sub_star,
                     Val amp_depth) const {
    Val mixed = conv2d(t, concat_c(t, amp_depth_star, amp_sub_star), bp[amp_w_], bp[amp_b_], 1, 0);
    return relu(t, add(t, mixed, amp_depth));
  }

  // phi_f = wrap(Sigmoid(conv(cat(mean(phi_sub), max(phi_sub)))) * phi_depth + phi_depth)
  Val fuse_phase(Tape<T>& t, const BoundParams<T>& bp, Val phi_depth, Val phi_sub) const {
    Val stats = concat_c(t, channel_mean(t, phi_sub), channel_max(t, phi_sub));
    Val logits = conv2d(t, stats, bp[phase_w_], bp[phase_b_], 1, 3);
    Val gate = sigmoid(t, logits);
    if (!per_channel_attn_) gate = broadcast_c(t, gate, channels_);
    return wrap_phase(t, add(t, mul(t, gate, phi_depth), phi_depth));
  }

  // spectral path shared by full and V2..V5
  SpecVal forward_spectral(Tape<T>& t, const BoundParams<T>& bp, SpecVal s_depth, SpecVal s_rgb,
                           const LowFreqMask& mask) const {
    check(t.val(s_depth.real).same_shape(t.val(s_rgb.real)),
          "freq_fusion: depth/rgb spectrum shape mismatch");
    if (variant_ == Variant::v2) {
      Val cat = concat_c(t, concat_c(t, s_depth.real, s_depth.imag),
                         concat_c(t, s_rgb.real, s_rgb.imag));
      Val hidden = relu(t, conv2d(t, cat, bp[mlp1_w_], bp[mlp1_b_], 1, 0));
      Val out = conv2d(t, hidden, bp[mlp2_w_], bp[mlp2_b_], 1, 0);
      return {slice_c(t, out, 0, channels_), slice_c(t, out, channels_, 2 * channels_)};
    }

    auto [amp_d, phi_d] = decompose_t(t, s_depth);
    auto [amp_r, phi_r] = decompose_t(t, s_rgb);

    if (variant_ == Variant::v5) {
      Val amp_f = relu(t, conv2d(t, concat_c(t, amp_d, amp_r), bp[amp_w_], bp[amp_b_], 1, 0));
      Val phi_f =
          wrap_phase(t, conv2d(t, concat_c(t, phi_d, phi_r), bp[phase_w_], bp[phase_b_], 1, 0));
      return recompose_t(t, amp_f, phi_f);
    }

    Val amp_f;
    if (variant_ == Variant::v3) {
      amp_f = amp_d;  // amplitude fusion removed
    } else {
      Val amp_sub = abs_val(t, sub(t, amp_d, amp_r));
      Val amp_d_star = rescale_lowfreq_t(t, amp_d, mask);
      Val amp_sub_star = rescale_lowfreq_t(t, amp_sub, mask);
      amp_f = fuse_amplitude(t, bp, amp_d_star, amp_sub_star, amp_d);
    }

    Val phi_f;
    if (variant_ == Variant::v4) {
      phi_f = phi_d;  // phase fusion removed
    } else {
      Val phi_sub = abs_val(t, sub(t, phi_d, phi_r));
      phi_f = fuse_phase(t, bp, phi_d, phi_sub);
    }

    return recompose_t(t, amp_f, phi_f);
  }

  // V1: per-pixel MLP on concatenated spatial features
  Val forward_spatial_mlp(Tape<T>& t, const BoundParams<T>& bp, Val f_depth, Val f_rgb) const {
    check(variant_ == Variant::v1, "forward_spatial_mlp: only valid for V1");
    Val cat = concat_c(t, f_depth, f_rgb);
    Val hidden = relu(t, conv2d(t, cat, bp[mlp1_w_], bp[mlp1_b_], 1, 0));
    return conv2d(t, hidden, bp[mlp2_w_], bp[mlp2_b_], 1, 0);
  }

  // zero every learnable tensor of this module (residual-identity checks)
  void zero_params(ParamStore<T>& store) const {
    for (int id : {amp_w_, amp_b_, phase_w_, phase_b_, mlp1_w_, mlp1_b_, mlp2_w_, mlp2_b_}) {
      if (id < 0) continue;
      Tensor<T>& v = store.value(id);
      for (long i = 0; i < v.numel(); ++i) v[i] = T(0);
    }
  }

 private:
  int channels_ = 0;
  Variant variant_ = Variant::full;
  bool per_channel_attn_ = false;
  int amp_w_ = -1, amp_b_ = -1;
  int phase_w_ = -1, phase_b_ = -1;
  int mlp1_w_ = -1, mlp1_b_ = -1, mlp2_w_ = -1, mlp2_b_ = -1;
};

// Module-level convenience matching the spec operation: fuse a depth feature
// map against either an RGB feature map or an already-fused spectrum.
template <typename T>
SpecVal freq_fusion_forward(Tape<T>& t, const FreqFusionModule<T>& m, const BoundParams<T>& bp,
                            Val f_depth, Val f_rgb, const LowFreqMask& mask) {
  return m.forward_spectral(t, bp, dft2_t(t, f_depth), dft2_t(t, f_rgb), mask);
}

template <typename T>
SpecVal freq_fusion_forward(Tape<T>& t, const FreqFusionModule<T>& m, const BoundParams<T>& bp,
                            Val f_depth, SpecVal s_rgb, const LowFreqMask& mask) {
  return m.forward_spectral(t, bp, dft2_t(t, f_depth), s_rgb, mask);
}

}  // namespace s2ml
