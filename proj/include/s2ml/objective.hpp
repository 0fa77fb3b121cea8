#pragma once

// Masked training loss (L1 + L2 over valid ground-truth pixels) and the
// RMSE / REL / delta evaluation metrics. Valid means gt > 0; invalid pixels
// contribute to nothing, including the pixel count P.

#include <cmath>
#include <cstdint>

#include "s2ml/autodiff.hpp"
#include "s2ml/tensor.hpp"

namespace s2ml {

struct MetricReport {
  double rmse = 0.0;  // meters
  double rel = 0.0;
  double delta1 = 0.0;  // percentages for 1.25, 1.25^2, 1.25^3
  double delta2 = 0.0;
  double delta3 = 0.0;
  long n_valid = 0;
};

// Pixel-level accumulator so evaluation can pool across samples; sums are
// kept in double regardless of the tensor scalar type.
struct MetricAccumulator {
  double sq_err = 0.0;
  double abs_rel = 0.0;
  long d1 = 0, d2 = 0, d3 = 0;
  long n = 0;

  template <typename T>
  void update(const Tensor<T>& pred, const Tensor<T>& gt) {
    check(pred.same_shape(gt), "metrics: shape mismatch");
    for (long i = 0; i < gt.numel(); ++i) {
      const double g = static_cast<double>(gt[i]);
      if (g <= 0.0) continue;
      const double p = static_cast<double>(pred[i]);
      const double e = p - g;
      sq_err += e * e;
      abs_rel += std::abs(e) / g;
      ++n;
      if (p > 0.0) {
        const double ratio = p > g ? p / g : g / p;
        if (ratio < 1.25) ++d1;
        if (ratio < 1.5625) ++d2;
        if (ratio < 1.953125) ++d3;
      }
      // non-positive predictions count as threshold failures
    }
  }

  MetricReport report() const {
    check(n >= 1, "metrics: no valid pixels");
    MetricReport r;
    r.rmse = std::sqrt(sq_err / n);
    r.rel = abs_rel / n;
    r.delta1 = 100.0 * d1 / n;
    r.delta2 = 100.0 * d2 / n;
    r.delta3 = 100.0 * d3 / n;
    r.n_valid = n;
    return r;
  }
};

template <typename T>
MetricReport evaluate_metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
  MetricAccumulator acc;
  acc.update(pred, gt);
  return acc.report();
}

// gamma1*L1 + gamma2*L2 with gamma1 = gamma2 = 1, both averaged over the
// valid-pixel count P
template <typename T>
double total_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  check(pred.same_shape(gt), "total_loss: shape mismatch");
  double l1 = 0.0, l2 = 0.0;
  long p_count = 0;
  for (long i = 0; i < gt.numel(); ++i) {
    const double g = static_cast<double>(gt[i]);
    if (g <= 0.0) continue;
    const double d = static_cast<double>(pred[i]) - g;
    l1 += std::abs(d);
    l2 += d * d;
    ++p_count;
  }
  check(p_count >= 1, "total_loss: no valid pixels (P = 0)");
  return l1 / p_count + l2 / p_count;
}

// tape version used by training; gt enters as a constant
template <typename T>
Val total_loss_t(Tape<T>& t, Val pred, const Tensor<T>& gt) {
  check(t.val(pred).same_shape(gt), "total_loss_t: shape mismatch");
  Tensor<T> mask(gt.shape());
  long p_count = 0;
  for (long i = 0; i < gt.numel(); ++i) {
    const bool valid = static_cast<double>(gt[i]) > 0.0;
    mask[i] = valid ? T(1) : T(0);
    if (valid) ++p_count;
  }
  check(p_count >= 1, "total_loss_t: no valid pixels (P = 0)");
  Val diff = sub(t, pred, t.leaf(gt));
  Val masked = mul_const(t, diff, mask);
  const T inv_p = static_cast<T>(1.0 / static_cast<double>(p_count));
  Val l1 = scale(t, sum_all(t, abs_val(t, masked)), inv_p);
  Val l2 = scale(t, sum_all(t, mul(t, masked, masked)), inv_p);
  return add(t, l1, l2);
}

}  // namespace s2ml
