#include <cmath>

#include "doctest.h"
#include "s2ml/gradcheck.hpp"
#include "s2ml/nn_ops.hpp"
#include "s2ml/spectra.hpp"
#include "s2ml/tensor.hpp"

using namespace s2ml;

namespace {

// weighted sum against a fixed random tensor, so every output entry
// contributes a distinct gradient
template <typename T>
Val probe_loss(Tape<T>& t, Val out, Rng& rng) {
  Tensor<T> w(t.val(out).shape());
  for (long i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return sum_all(t, mul_const(t, out, w));
}

constexpr double kEps = 1e-5;  // balances truncation against roundoff in double
constexpr double kTol = 1e-5;  // primitives should be well below the 1e-3 gate

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
  Rng init(1);
  ParamStore<double> ps;
  ps.add("a", randn<double>({2, 3, 4}, init));
  ps.add("b", randn<double>({2, 3, 4}, init));
  Rng probe_rng(2);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        Val a = bp[0], b = bp[1];
        Val x = mul(t, add(t, a, b), sub(t, a, b));
        x = add(t, x, sigmoid(t, a));
        x = add(t, x, mul(t, sin_val(t, b), cos_val(t, a)));
        x = add(t, x, relu(t, b));
        x = add(t, x, abs_val(t, scale(t, a, 0.7)));
        return sum_all(t, x);
      },
      24, kEps, probe_rng);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("matmul gradients") {
  Rng init(3);
  ParamStore<double> ps;
  ps.add("a", randn<double>({4, 5}, init));
  ps.add("b", randn<double>({5, 3}, init));
  Rng probe_rng(4);
  Rng loss_rng(5);
  auto rep = grad_check(
      ps,
      [&loss_rng](Tape<double>& t, BoundParams<double>& bp) {
        Rng r(99);
        return probe_loss(t, matmul(t, bp[0], bp[1]), r);
      },
      20, kEps, probe_rng);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("batched constant matmul gradients (DFT building blocks)") {
  Rng init(6);
  ParamStore<double> ps;
  ps.add("x", randn<double>({2, 4, 5}, init));
  Tensor<double> mh = randn<double>({4, 4}, init);
  Tensor<double> mw = randn<double>({5, 5}, init);
  Rng probe_rng(7);
  auto rep = grad_check(
      ps,
      [mh, mw](Tape<double>& t, BoundParams<double>& bp) {
        Rng r(98);
        Val y = mmul_left_const(t, mh, bp[0]);
        y = mmul_right_const(t, y, mw);
        return probe_loss(t, y, r);
      },
      30, kEps, probe_rng);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("channel concat/slice/mean/max/broadcast gradients") {
  Rng init(8);
  ParamStore<double> ps;
  ps.add("a", randn<double>({3, 4, 4}, init));
  ps.add("b", randn<double>({2, 4, 4}, init));
  Rng probe_rng(9);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        Rng r(97);
        Val cat = concat_c(t, bp[0], bp[1]);
        Val s = slice_c(t, cat, 1, 4);
        Val m = channel_mean(t, s);
        Val mx = channel_max(t, cat);
        Val joined = add(t, broadcast_c(t, m, 2), broadcast_c(t, mx, 2));
        return probe_loss(t, joined, r);
      },
      30, kEps, probe_rng);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("complex_to_polar gradients away from the origin") {
  Rng init(10);
  ParamStore<double> ps;
  // keep magnitudes away from zero so the polar map is smooth
  Tensor<double> re({1, 3, 4}), im({1, 3, 4});
  for (long i = 0; i < re.numel(); ++i) {
    re[i] = init.uniform(0.5, 2.0) * (init.uniform() < 0.5 ? -1.0 : 1.0);
    im[i] = init.uniform(0.5, 2.0) * (init.uniform() < 0.5 ? -1.0 : 1.0);
  }
  ps.add("re", re);
  ps.add("im", im);
  Rng probe_rng(11);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        auto [amp, ph] = complex_to_polar(t, bp[0], bp[1]);
        Rng r1(96), r2(95);
        return add(t, probe_loss(t, amp, r1), probe_loss(t, ph, r2));
      },
      24, kEps, probe_rng);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("phase-only consumer still receives gradients through the polar op") {
  Rng init(12);
  ParamStore<double> ps;
  Tensor<double> re({1, 2, 2}, {1.0, -0.8, 0.6, 1.2});
  Tensor<double> im({1, 2, 2}, {0.5, 0.7, -0.9, 0.4});
  ps.add("re", re);
  ps.add("im", im);
  Rng probe_rng(13);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        auto [amp, ph] = complex_to_polar(t, bp[0], bp[1]);
        (void)amp;
        Rng r(94);
        return probe_loss(t, ph, r);
      },
      8, kEps, probe_rng);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("conv2d matches a hand computation on a 1x1 kernel") {
  Tape<double> t;
  Tensor<double> x({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor<double> w({1, 2, 1, 1}, {2.0, -1.0});
  Tensor<double> b({1}, {0.5});
  Val y = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 1, 0);
  CHECK(t.val(y).at(0, 0, 0) == doctest::Approx(2 * 1 - 5 + 0.5));
  CHECK(t.val(y).at(0, 1, 1) == doctest::Approx(2 * 4 - 8 + 0.5));
}

TEST_CASE("conv2d gradients: stride 1 and stride 2, with padding") {
  Rng init(14);
  ParamStore<double> ps;
  ps.add("x", randn<double>({2, 6, 7}, init));
  ps.add("w1", randn<double>({3, 2, 3, 3}, init, 0.5));
  ps.add("b1", randn<double>({3}, init, 0.1));
  ps.add("w2", randn<double>({2, 3, 3, 3}, init, 0.5));
  ps.add("b2", randn<double>({2}, init, 0.1));
  Rng probe_rng(15);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        Rng r(93);
        Val h = conv2d(t, bp[0], bp[1], bp[2], 2, 1);
        Val y = conv2d(t, h, bp[3], bp[4], 1, 1);
        return probe_loss(t, y, r);
      },
      25, kEps, probe_rng);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("window partition then merge is the identity") {
  Rng init(16);
  Tensor<double> x = randn<double>({3, 8, 12}, init);
  auto wins = window_partition(x, 4);
  auto back = window_merge(wins, 4, 3, 8, 12);
  CHECK(max_abs_diff(x, back) == 0.0);
}

TEST_CASE("window attention: uniform weights on constant input") {
  Tape<double> t;
  Tensor<double> q({2, 4, 4}, 0.7), k({2, 4, 4}, -0.3);
  Rng init(17);
  Tensor<double> v = randn<double>({2, 4, 4}, init);
  Val out = window_attention(t, t.leaf(q), t.leaf(k), t.leaf(v), 4, 2);
  // constant q/k means every logit ties, so the output is the window mean of v
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) mean += v.at(c, y, x);
    mean /= 16.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        CHECK(t.val(out).at(c, y, x) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("window attention rows sum to one") {
  // indirectly: attention output of all-ones V is all-ones
  Tape<double> t;
  Rng init(18);
  Tensor<double> q = randn<double>({4, 8, 8}, init);
  Tensor<double> k = randn<double>({4, 8, 8}, init);
  Tensor<double> ones({4, 8, 8}, 1.0);
  Val out = window_attention(t, t.leaf(q), t.leaf(k), t.leaf(ones), 4, 2);
  for (long i = 0; i < t.val(out).numel(); ++i)
    CHECK(t.val(out)[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("window attention gradients") {
  Rng init(19);
  ParamStore<double> ps;
  ps.add("q", randn<double>({4, 4, 8}, init, 0.5));
  ps.add("k", randn<double>({4, 4, 8}, init, 0.5));
  ps.add("v", randn<double>({4, 4, 8}, init));
  Rng probe_rng(20);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        Rng r(92);
        return probe_loss(t, window_attention(t, bp[0], bp[1], bp[2], 4, 2), r);
      },
      30, kEps, probe_rng);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("upsample, pad, crop, roll gradients") {
  Rng init(21);
  ParamStore<double> ps;
  ps.add("x", randn<double>({2, 3, 5}, init));
  Rng probe_rng(22);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        Rng r(91);
        Val up = upsample_bilinear(t, bp[0], 2);
        Val padded = reflect_pad_br(t, bp[0], 1, 1);
        Val cropped = crop(t, padded, 3, 5);
        Val rolled = roll2d(t, bp[0], 1, -2);
        Rng r2(90), r3(89);
        return add(t, probe_loss(t, up, r),
                   add(t, probe_loss(t, cropped, r2), probe_loss(t, rolled, r3)));
      },
      30, kEps, probe_rng);
  CHECK(rep.max_rel_err < kTol);
}

TEST_CASE("gradients flow through tape DFT, polar, and inverse DFT") {
  Rng init(23);
  ParamStore<double> ps;
  ps.add("x", randn<double>({1, 4, 6}, init));
  Rng probe_rng(24);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        SpecVal s = dft2_t(t, bp[0]);
        auto [amp, ph] = decompose_t(t, s);
        SpecVal s2 = recompose_t(t, amp, wrap_phase(t, scale(t, ph, 1.5)));
        Val y = idft2_t(t, s2);
        Rng r(88);
        return probe_loss(t, y, r);
      },
      24, kEps, probe_rng);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  const double pi = 3.14159265358979323846;
  CHECK(wrap_angle(pi) == doctest::Approx(pi));
  CHECK(wrap_angle(-pi) == doctest::Approx(pi));
  CHECK(wrap_angle(3 * pi / 2) == doctest::Approx(-pi / 2));
  CHECK(wrap_angle(-3 * pi / 2) == doctest::Approx(pi / 2));
  CHECK(wrap_angle(0.25) == doctest::Approx(0.25));
  CHECK(wrap_angle(2 * pi + 0.25) == doctest::Approx(0.25));
}

TEST_CASE("gradcheck engine flags a corrupted gradient") {
  // negative control: a deliberately wrong backward must fail the check
  Rng init(25);
  ParamStore<double> ps;
  ps.add("x", randn<double>({1, 2, 2}, init));
  Rng probe_rng(26);
  auto corrupt = [](Tape<double>& t, BoundParams<double>& bp) {
    Val y = unary_op(
        t, bp[0], [](double v) { return v * v; },
        [](double v, double) { return 3.0 * v; });  // true derivative is 2v
    return sum_all(t, y);
  };
  auto rep = grad_check(ps, corrupt, 4, kEps, probe_rng);
  CHECK(rep.max_rel_err > 0.1);
}
