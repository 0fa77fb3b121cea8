#pragma once

// Central-difference gradient checking against tape gradients. The loss
// builder is re-run from scratch for every probe, so any state it captures
// must be by value.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s2ml/params.hpp"
#include "s2ml/tensor.hpp"

namespace s2ml {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  long worst_index = -1;
  int n_probes = 0;
  bool passed(double tol) const { return n_probes > 0 && max_rel_err < tol; }
};

// |a - n| / max(|a|, |n|, floor). When both gradients sit below atol the
// entry counts as agreeing: structurally-zero gradients (for instance the
// key-conv bias, which softmax cancels row-wise) otherwise compare pure
// finite-difference roundoff against zero.
inline double grad_rel_err(double analytic, double numeric, double floor_ = 1e-6,
                           double atol = 1e-6) {
  if (std::abs(analytic) < atol && std::abs(numeric) < atol) return 0.0;
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor_});
}

// build: (Tape<T>&, BoundParams<T>&) -> Val scalar loss.
// probes_per_param entries of every parameter tensor are checked (all entries
// when the tensor is smaller than that).
template <typename T, typename BuildFn>
GradCheckReport grad_check(ParamStore<T>& params, BuildFn build, int probes_per_param,
                           double eps, Rng& rng) {
  GradCheckReport rep;

  // analytic gradients
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    BoundParams<T> bound = bind_params(tape, params);
    Val loss = build(tape, bound);
    tape.backward(loss);
    analytic.reserve(static_cast<std::size_t>(params.count()));
    for (int i = 0; i < params.count(); ++i) analytic.push_back(tape.grad(bound[i]));
  }

  auto eval_loss = [&]() {
    Tape<T> tape;
    BoundParams<T> bound = bind_params(tape, params);
    return static_cast<double>(tape.val(build(tape, bound))[0]);
  };

  for (int pi = 0; pi < params.count(); ++pi) {
    Tensor<T>& theta = params.value(pi);
    const long n = theta.numel();
    const int probes = static_cast<int>(std::min<long>(probes_per_param, n));
    for (int s = 0; s < probes; ++s) {
      const long j = (n <= probes_per_param) ? s : rng.uniform_int(static_cast<int>(n));
      const T saved = theta[j];
      theta[j] = saved + static_cast<T>(eps);
      const double lp = eval_loss();
      theta[j] = saved - static_cast<T>(eps);
      const double lm = eval_loss();
      theta[j] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[static_cast<std::size_t>(pi)][j]);
      const double err = grad_rel_err(a, numeric);
      ++rep.n_probes;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_param = params.name(pi);
        rep.worst_index = j;
      }
    }
  }
  return rep;
}

}  // namespace s2ml
