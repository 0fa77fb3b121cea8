#pragma once

// Spatial fusion: align the fused spectrum back to the spatial domain,
// aggregate with the depth features through a 1x1 convolution, refine with
// cascaded Swin-Convolution blocks, and project through a 3x3 convolution.

#include <string>
#include <vector>

#include "s2ml/nn_ops.hpp"
#include "s2ml/params.hpp"
#include "s2ml/spectra.hpp"

namespace s2ml {

template <typename T>
class SwinConvBlock {
 public:
  static SwinConvBlock create(ParamStore<T>& store, const std::string& prefix, int channels,
                              int window, int heads, bool shifted, Rng& rng) {
    check(channels % heads == 0, "SwinConvBlock: heads must divide channels");
    SwinConvBlock b;
    b.window_ = window;
    b.heads_ = heads;
    b.shifted_ = shifted;
    auto he = [&rng, channels](std::vector<int> shape) {
      return randn<T>(std::move(shape), rng, std::sqrt(2.0 / (channels * 9)));
    };
    const int C = channels;
    b.q_w_ = store.add(prefix + ".q.w", he({C, C, 3, 3}));
    b.q_b_ = store.add(prefix + ".q.b", Tensor<T>({C}));
    // no key bias: softmax cancels a row-constant logit shift, so it would
    // be a dead parameter
    b.k_w_ = store.add(prefix + ".k.w", he({C, C, 3, 3}));
    b.v_w_ = store.add(prefix + ".v.w", he({C, C, 3, 3}));
    b.v_b_ = store.add(prefix + ".v.b", Tensor<T>({C}));
    b.merge_w_ = store.add(prefix + ".merge.w", he({C, C, 3, 3}));
    b.merge_b_ = store.add(prefix + ".merge.b", Tensor<T>({C}));
    return b;
  }

  // merge_conv(attention(Q,K,V) + V) + F; reflect-padded to window
  // divisibility and cropped back after the merge
  Val forward(Tape<T>& t, const BoundParams<T>& bp, Val f) const {
    const Tensor<T>& F = t.val(f);
    const int H = F.dim(1), W = F.dim(2);
    const int pb = (window_ - H % window_) % window_;
    const int pr = (window_ - W % window_) % window_;
    Val x = reflect_pad_br(t, f, pb, pr);
    const int s = shifted_ ? window_ / 2 : 0;
    if (s) x = roll2d(t, x, -s, -s);
    Val q = conv2d(t, x, bp[q_w_], bp[q_b_], 1, 1);
    Val k = conv2d(t, x, bp[k_w_], bp[k_b_], 1, 1);
    Val v = conv2d(t, x, bp[v_w_], bp[v_b_], 1, 1);
    Val att = window_attention(t, q, k, v, window_, heads_);
    Val merged = conv2d(t, add(t, att, v), bp[merge_w_], bp[merge_b_], 1, 1);
    if (s) merged = roll2d(t, merged, s, s);
    return add(t, crop(t, merged, H, W), f);
  }

  void zero_merge(ParamStore<T>& store) const {
    for (int id : {merge_w_, merge_b_}) {
      Tensor<T>& v = store.value(id);
      for (long i = 0; i < v.numel(); ++i) v[i] = T(0);
    }
  }

  void zero_params(ParamStore<T>& store) const {
    for (int id : {q_w_, q_b_, k_w_, k_b_, v_w_, v_b_, merge_w_, merge_b_}) {
      Tensor<T>& v = store.value(id);
      for (long i = 0; i < v.numel(); ++i) v[i] = T(0);
    }
  }

 private:
  int window_ = 4, heads_ = 2;
  bool shifted_ = false;
  int q_w_ = -1, q_b_ = -1, k_w_ = -1, k_b_ = -1, v_w_ = -1, v_b_ = -1;
  int merge_w_ = -1, merge_b_ = -1;
};

template <typename T>
class SpatialFusionModule {
 public:
  static SpatialFusionModule create(ParamStore<T>& store, const std::string& prefix, int channels,
                                    int n_blocks, int window, int heads, bool shifted_windows,
                                    Rng& rng) {
    check(n_blocks >= 1, "SpatialFusionModule: need at least one block");
    SpatialFusionModule m;
    auto he = [&rng](std::vector<int> shape, int fan_in) {
      return randn<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in));
    };
    const int C = channels;
    m.agg_w_ = store.add(prefix + ".agg.w", he({C, 2 * C, 1, 1}, 2 * C));
    m.agg_b_ = store.add(prefix + ".agg.b", Tensor<T>({C}));
    for (int j = 0; j < n_blocks; ++j) {
      // when shifting is enabled, alternate blocks shift by half a window
      const bool shifted = shifted_windows && (j % 2 == 1);
      m.blocks_.push_back(SwinConvBlock<T>::create(store, prefix + ".block" + std::to_string(j),
                                                   C, window, heads, shifted, rng));
    }
    m.out_w_ = store.add(prefix + ".out.w", he({C, C, 3, 3}, C * 9));
    m.out_b_ = store.add(prefix + ".out.b", Tensor<T>({C}));
    return m;
  }

  // F_in = agg(cat(F_sf, F_depth)); F_J = blocks(F_in); out = out_conv(F_J + F_depth)
  Val forward_from_feature(Tape<T>& t, const BoundParams<T>& bp, Val f_sf, Val f_depth) const {
    check(t.val(f_sf).same_shape(t.val(f_depth)), "spatial_fusion: feature shape mismatch");
    Val f = conv2d(t, concat_c(t, f_sf, f_depth), bp[agg_w_], bp[agg_b_], 1, 0);
    for (const auto& b : blocks_) f = b.forward(t, bp, f);
    return conv2d(t, add(t, f, f_depth), bp[out_w_], bp[out_b_], 1, 1);
  }

  Val forward(Tape<T>& t, const BoundParams<T>& bp, SpecVal s_fused, Val f_depth) const {
    return forward_from_feature(t, bp, idft2_t(t, s_fused), f_depth);
  }

  const std::vector<SwinConvBlock<T>>& blocks() const { return blocks_; }

  void zero_params(ParamStore<T>& store) const {
    for (int id : {agg_w_, agg_b_, out_w_, out_b_}) {
      Tensor<T>& v = store.value(id);
      for (long i = 0; i < v.numel(); ++i) v[i] = T(0);
    }
    for (const auto& b : blocks_) b.zero_params(store);
  }

 private:
  int agg_w_ = -1, agg_b_ = -1;
  std::vector<SwinConvBlock<T>> blocks_;
  int out_w_ = -1, out_b_ = -1;
};

}  // namespace s2ml
