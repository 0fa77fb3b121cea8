#pragma once

// End-to-end S2ML model: embedding stems for RGB and raw depth, N cascaded
// spatio-spectral fusion pairs, depth output head, and residual-map
// introspection. Pair wiring: pair 1 consumes the embedded features; for
// pair i >= 2 the frequency fusion takes the previous fused spectrum on the
// RGB side and the previous spatial output (DFT'd) on the depth side.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "s2ml/freq_fusion.hpp"
#include "s2ml/objective.hpp"
#include "s2ml/spatial_fusion.hpp"

namespace s2ml {

struct S2MLConfig {
  int channels = 32;
  int pairs = 2;
  int blocks_per_pair = 2;
  int window = 4;
  int heads = 2;
  double rho = 0.25;
  double alpha = 0.5;
  int downsample = 4;
  Variant variant = Variant::full;
  bool shifted_windows = false;
  bool per_channel_phase_attn = false;

  void validate() const {
    check(channels >= 2 && channels % 2 == 0, "config: channels must be even and >= 2");
    check(pairs >= 1, "config: pairs must be >= 1");
    check(blocks_per_pair >= 1, "config: blocks_per_pair must be >= 1");
    check(window >= 1, "config: window must be >= 1");
    check(heads >= 1 && channels % heads == 0, "config: heads must divide channels");
    check(rho >= 0.0 && rho <= 1.0, "config: rho must be in [0,1]");
    check(alpha > 0.0, "config: alpha must be positive");
    check(downsample >= 2 && (downsample & (downsample - 1)) == 0,
          "config: downsample must be a power of two >= 2");
  }
};

// two stride-2 convolutions plus two residual blocks; extra stride-2 stages
// when downsample > 4
template <typename T>
class EmbedStem {
 public:
  static EmbedStem create(ParamStore<T>& store, const std::string& prefix, int in_channels,
                          int channels, int downsample, Rng& rng) {
    EmbedStem s;
    auto he = [&rng](std::vector<int> shape, int fan_in) {
      return randn<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in));
    };
    int stages = 0;
    for (int d = downsample; d > 1; d /= 2) ++stages;
    const int mid = channels / 2;
    int cin = in_channels;
    for (int i = 0; i < stages; ++i) {
      const int cout = (i + 1 == stages) ? channels : mid;
      const std::string p = prefix + ".down" + std::to_string(i);
      s.down_w_.push_back(store.add(p + ".w", he({cout, cin, 3, 3}, cin * 9)));
      s.down_b_.push_back(store.add(p + ".b", Tensor<T>({cout})));
      cin = cout;
    }
    for (int r = 0; r < 2; ++r) {
      const std::string p = prefix + ".res" + std::to_string(r);
      s.res_w1_.push_back(store.add(p + ".c1.w", he({channels, channels, 3, 3}, channels * 9)));
      s.res_b1_.push_back(store.add(p + ".c1.b", Tensor<T>({channels})));
      s.res_w2_.push_back(store.add(p + ".c2.w", he({channels, channels, 3, 3}, channels * 9)));
      s.res_b2_.push_back(store.add(p + ".c2.b", Tensor<T>({channels})));
    }
    return s;
  }

  Val forward(Tape<T>& t, const BoundParams<T>& bp, Val x) const {
    Val f = x;
    for (std::size_t i = 0; i < down_w_.size(); ++i)
      f = relu(t, conv2d(t, f, bp[down_w_[i]], bp[down_b_[i]], 2, 1));
    for (std::size_t r = 0; r < res_w1_.size(); ++r) {
      Val h = relu(t, conv2d(t, f, bp[res_w1_[r]], bp[res_b1_[r]], 1, 1));
      h = conv2d(t, h, bp[res_w2_[r]], bp[res_b2_[r]], 1, 1);
      f = relu(t, add(t, f, h));
    }
    return f;
  }

 private:
  std::vector<int> down_w_, down_b_;
  std::vector<int> res_w1_, res_b1_, res_w2_, res_b2_;
};

// 3x3 conv -> bilinear upsample x downsample -> 3x3 conv to one channel
template <typename T>
class DepthHead {
 public:
  static DepthHead create(ParamStore<T>& store, const std::string& prefix, int channels,
                          int downsample, Rng& rng) {
    DepthHead h;
    h.factor_ = downsample;
    auto he = [&rng](std::vector<int> shape, int fan_in) {
      return randn<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in));
    };
    h.c1_w_ = store.add(prefix + ".c1.w", he({channels, channels, 3, 3}, channels * 9));
    h.c1_b_ = store.add(prefix + ".c1.b", Tensor<T>({channels}));
    h.c2_w_ = store.add(prefix + ".c2.w", he({1, channels, 3, 3}, channels * 9));
    h.c2_b_ = store.add(prefix + ".c2.b", Tensor<T>({1}));
    return h;
  }

  Val forward(Tape<T>& t, const BoundParams<T>& bp, Val f) const {
    Val h = conv2d(t, f, bp[c1_w_], bp[c1_b_], 1, 1);
    h = upsample_bilinear(t, h, factor_);
    return conv2d(t, h, bp[c2_w_], bp[c2_b_], 1, 1);
  }

 private:
  int factor_ = 4;
  int c1_w_ = -1, c1_b_ = -1, c2_w_ = -1, c2_b_ = -1;
};

// per-pair intermediate tensors captured during a traced forward pass
template <typename T>
struct PairTrace {
  Tensor<T> f_depth_in;  // the pair's depth-side spatial input
  Tensor<T> f_sf;        // spatial-domain image of the fused spectrum (V1: MLP output)
  Tensor<T> f_out;
  Tensor<T> fused_re, fused_im;            // S_fused (empty for V1)
  Tensor<T> depth_spec_re, depth_spec_im;  // spectrum consumed on the depth side
  Tensor<T> rgb_spec_re, rgb_spec_im;      // spectrum consumed on the RGB side
};

template <typename T>
class S2MLModel {
 public:
  S2MLConfig cfg;
  ParamStore<T> params;
  std::uint64_t init_seed = 0;

  static S2MLModel init(const S2MLConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    S2MLModel m;
    m.cfg = cfg;
    m.init_seed = seed;
    Rng rng(seed);
    m.rgb_stem_ = EmbedStem<T>::create(m.params, "rgb_embed", 3, cfg.channels, cfg.downsample, rng);
    m.depth_stem_ =
        EmbedStem<T>::create(m.params, "depth_embed", 1, cfg.channels, cfg.downsample, rng);
    for (int i = 0; i < cfg.pairs; ++i) {
      const std::string p = "pair" + std::to_string(i);
      m.freq_.push_back(FreqFusionModule<T>::create(m.params, p + ".freq", cfg.channels,
                                                    cfg.variant, cfg.per_channel_phase_attn, rng));
      m.spatial_.push_back(SpatialFusionModule<T>::create(m.params, p + ".spatial", cfg.channels,
                                                          cfg.blocks_per_pair, cfg.window,
                                                          cfg.heads, cfg.shifted_windows, rng));
    }
    m.head_ = DepthHead<T>::create(m.params, "head", cfg.channels, cfg.downsample, rng);
    return m;
  }

  const FreqFusionModule<T>& freq(int i) const { return freq_[static_cast<std::size_t>(i)]; }
  const SpatialFusionModule<T>& spatial(int i) const {
    return spatial_[static_cast<std::size_t>(i)];
  }
  const DepthHead<T>& head() const { return head_; }

  void validate_input(const Tensor<T>& rgb, const Tensor<T>& raw_depth) const {
    check(rgb.ndim() == 3 && rgb.dim(0) == 3, "forward: rgb must be [3,H,W]");
    check(raw_depth.ndim() == 3 && raw_depth.dim(0) == 1, "forward: raw depth must be [1,H,W]");
    check(rgb.dim(1) == raw_depth.dim(1) && rgb.dim(2) == raw_depth.dim(2),
          "forward: rgb/depth size mismatch");
    check(rgb.dim(1) % cfg.downsample == 0 && rgb.dim(2) % cfg.downsample == 0,
          "forward: H and W must be divisible by the backbone downsample");
    check(rgb.all_finite() && raw_depth.all_finite(), "forward: non-finite input");
  }

  // (F_rgb0, F_depth0)
  std::pair<Val, Val> embed(Tape<T>& t, const BoundParams<T>& bp, const Tensor<T>& rgb,
                            const Tensor<T>& raw_depth) const {
    validate_input(rgb, raw_depth);
    Val f_rgb = rgb_stem_.forward(t, bp, t.leaf(rgb));
    Val f_depth = depth_stem_.forward(t, bp, t.leaf(raw_depth));
    return {f_rgb, f_depth};
  }

  Val forward_t(Tape<T>& t, const BoundParams<T>& bp, const Tensor<T>& rgb,
                const Tensor<T>& raw_depth, std::vector<PairTrace<T>>* trace = nullptr) const {
    auto [f_rgb0, f_depth0] = embed(t, bp, rgb, raw_depth);
    const int fh = t.val(f_depth0).dim(1), fw = t.val(f_depth0).dim(2);
    const LowFreqMask mask = make_lowfreq_mask(fh, fw, cfg.rho, cfg.alpha);

    Val depth_side = f_depth0;
    SpecVal carry_spec{};     // fused spectrum conveyed to the next pair
    Val carry_feat{};         // V1: spatial carrier instead of a spectrum
    const bool v1 = cfg.variant == Variant::v1;

    for (int i = 0; i < cfg.pairs; ++i) {
      PairTrace<T> tr;
      if (trace) tr.f_depth_in = t.val(depth_side);
      Val f_sf{};
      if (v1) {
        Val rgb_side = (i == 0) ? f_rgb0 : carry_feat;
        f_sf = freq_[static_cast<std::size_t>(i)].forward_spatial_mlp(t, bp, depth_side, rgb_side);
        carry_feat = f_sf;
      } else {
        SpecVal s_depth = dft2_t(t, depth_side);
        SpecVal s_rgb = (i == 0) ? dft2_t(t, f_rgb0) : carry_spec;
        SpecVal s_fused =
            freq_[static_cast<std::size_t>(i)].forward_spectral(t, bp, s_depth, s_rgb, mask);
        if (trace) {
          tr.depth_spec_re = t.val(s_depth.real);
          tr.depth_spec_im = t.val(s_depth.imag);
          tr.rgb_spec_re = t.val(s_rgb.real);
          tr.rgb_spec_im = t.val(s_rgb.imag);
          tr.fused_re = t.val(s_fused.real);
          tr.fused_im = t.val(s_fused.imag);
        }
        carry_spec = s_fused;
        f_sf = idft2_t(t, s_fused);
      }
      Val f_out = spatial_[static_cast<std::size_t>(i)].forward_from_feature(t, bp, f_sf,
                                                                             depth_side);
      if (trace) {
        tr.f_sf = t.val(f_sf);
        tr.f_out = t.val(f_out);
        trace->push_back(std::move(tr));
      }
      depth_side = f_out;
    }
    return head_.forward(t, bp, depth_side);
  }

  // convenience: plain-tensor forward on a private tape
  Tensor<T> forward(const Tensor<T>& rgb, const Tensor<T>& raw_depth,
                    std::vector<PairTrace<T>>* trace = nullptr) const {
    Tape<T> t;
    BoundParams<T> bp = bind_params(t, params);
    return t.val(forward_t(t, bp, rgb, raw_depth, trace));
  }

  // run the head alone on an arbitrary feature map
  Tensor<T> apply_head(const Tensor<T>& feature) const {
    Tape<T> t;
    BoundParams<T> bp = bind_params(t, params);
    return t.val(head_.forward(t, bp, t.leaf(feature)));
  }

  // R_FF = head(F_sf^i - F_depth^i), R_FI = head(F_out^i - F_depth^i);
  // pair_index is 1-based like the spec's i
  std::pair<Tensor<T>, Tensor<T>> residual_maps(const Tensor<T>& rgb, const Tensor<T>& raw_depth,
                                                int pair_index) const {
    check(pair_index >= 1 && pair_index <= cfg.pairs, "residual_maps: pair index out of range");
    std::vector<PairTrace<T>> trace;
    forward(rgb, raw_depth, &trace);
    const PairTrace<T>& tr = trace[static_cast<std::size_t>(pair_index - 1)];
    Tensor<T> d_ff(tr.f_sf.shape()), d_fi(tr.f_out.shape());
    for (long j = 0; j < d_ff.numel(); ++j) d_ff[j] = tr.f_sf[j] - tr.f_depth_in[j];
    for (long j = 0; j < d_fi.numel(); ++j) d_fi[j] = tr.f_out[j] - tr.f_depth_in[j];
    return {apply_head(d_ff), apply_head(d_fi)};
  }

  void zero_fusion_params() {
    for (const auto& f : freq_) f.zero_params(params);
  }
  void zero_spatial_params() {
    for (const auto& s : spatial_) s.zero_params(params);
  }
  void zero_merge_convs() {
    for (const auto& s : spatial_)
      for (const auto& b : s.blocks()) b.zero_merge(params);
  }

 private:
  EmbedStem<T> rgb_stem_, depth_stem_;
  std::vector<FreqFusionModule<T>> freq_;
  std::vector<SpatialFusionModule<T>> spatial_;
  DepthHead<T> head_;
};

// Rebuild the model for cfg.variant, carrying over every parameter whose name
// and shape survive the change. Validates the variant; unknown values are
// rejected by config parsing before this point.
template <typename T>
S2MLModel<T> apply_variant(const S2MLConfig& cfg, const S2MLModel<T>& state) {
  S2MLModel<T> out = S2MLModel<T>::init(cfg, state.init_seed);
  for (int i = 0; i < out.params.count(); ++i) {
    const std::string& name = out.params.name(i);
    if (state.params.has(name) &&
        state.params.at(name).shape() == out.params.value(i).shape()) {
      out.params.value(i) = state.params.at(name);
    }
  }
  return out;
}

}  // namespace s2ml
