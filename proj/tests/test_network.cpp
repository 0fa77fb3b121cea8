#include <cmath>
#include <set>

#include "doctest.h"
#include "s2ml/gradcheck.hpp"
#include "s2ml/network.hpp"

using namespace s2ml;

namespace {

S2MLConfig tiny_config(int pairs = 2, Variant v = Variant::full) {
  S2MLConfig cfg;
  cfg.channels = 4;
  cfg.pairs = pairs;
  cfg.blocks_per_pair = 1;
  cfg.window = 4;
  cfg.heads = 2;
  cfg.downsample = 4;
  cfg.variant = v;
  return cfg;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> random_input(int h, int w, std::uint64_t seed,
                                             double invalid_frac = 0.2) {
  Rng rng(seed);
  Tensor<T> rgb({3, h, w}), depth({1, h, w});
  for (long i = 0; i < rgb.numel(); ++i) rgb[i] = static_cast<T>(rng.uniform());
  for (long i = 0; i < depth.numel(); ++i)
    depth[i] = static_cast<T>(rng.uniform() < invalid_frac ? 0.0 : rng.uniform(0.5, 10.0));
  return {rgb, depth};
}

}  // namespace

TEST_CASE("embed produces the contracted feature shape at full scale") {
  S2MLConfig cfg;  // defaults: C=32, downsample 4
  auto model = S2MLModel<float>::init(cfg, 1);
  auto [rgb, depth] = random_input<float>(192, 288, 2);
  Tape<float> t;
  auto bp = bind_params(t, model.params);
  auto [f_rgb, f_depth] = model.embed(t, bp, rgb, depth);
  CHECK(t.val(f_rgb).shape() == std::vector<int>{32, 48, 72});
  CHECK(t.val(f_depth).shape() == std::vector<int>{32, 48, 72});
}

TEST_CASE("embed is bitwise deterministic and total on all-invalid depth") {
  auto model = S2MLModel<float>::init(tiny_config(), 3);
  auto [rgb, depth] = random_input<float>(16, 16, 4);
  for (long i = 0; i < depth.numel(); ++i) depth[i] = 0.0f;

  auto run = [&] {
    Tape<float> t;
    auto bp = bind_params(t, model.params);
    auto [fr, fd] = model.embed(t, bp, rgb, depth);
    return std::pair{t.val(fr), t.val(fd)};
  };
  auto a = run();
  auto b = run();
  CHECK(max_abs_diff(a.first, b.first) == 0.0);
  CHECK(max_abs_diff(a.second, b.second) == 0.0);
  CHECK(a.second.all_finite());
}

TEST_CASE("embed rejects indivisible input dims") {
  auto model = S2MLModel<float>::init(tiny_config(), 5);
  auto [rgb, depth] = random_input<float>(18, 16, 6);
  Tape<float> t;
  auto bp = bind_params(t, model.params);
  CHECK_THROWS_AS(model.embed(t, bp, rgb, depth), std::invalid_argument);
}

TEST_CASE("forward output matches input depth shape and stays finite") {
  auto model = S2MLModel<float>::init(tiny_config(), 7);
  auto [rgb, depth] = random_input<float>(16, 24, 8);
  auto pred = model.forward(rgb, depth);
  CHECK(pred.shape() == depth.shape());
  CHECK(pred.all_finite());

  // degenerate input: all-invalid depth, constant rgb
  for (long i = 0; i < depth.numel(); ++i) depth[i] = 0.0f;
  for (long i = 0; i < rgb.numel(); ++i) rgb[i] = 0.5f;
  auto pred2 = model.forward(rgb, depth);
  CHECK(pred2.all_finite());
}

TEST_CASE("forward is bitwise deterministic") {
  auto model = S2MLModel<float>::init(tiny_config(), 9);
  auto [rgb, depth] = random_input<float>(16, 16, 10);
  CHECK(max_abs_diff(model.forward(rgb, depth), model.forward(rgb, depth)) == 0.0);
}

TEST_CASE("N=1 vs N=2 parameter counts differ by exactly one pair") {
  auto m1 = S2MLModel<float>::init(tiny_config(1), 11);
  auto m2 = S2MLModel<float>::init(tiny_config(2), 11);
  long pair1_params = 0;
  for (int i = 0; i < m2.params.count(); ++i)
    if (m2.params.name(i).rfind("pair1.", 0) == 0) pair1_params += m2.params.value(i).numel();
  CHECK(pair1_params > 0);
  CHECK(m2.params.total_params() - m1.params.total_params() == pair1_params);
}

TEST_CASE("depth head: full-resolution output, bias pattern on zero features") {
  auto model = S2MLModel<float>::init(tiny_config(), 13);
  TensorF zero_feat({4, 4, 6});
  auto out = model.apply_head(zero_feat);
  CHECK(out.shape() == std::vector<int>{1, 16, 24});
  auto out2 = model.apply_head(zero_feat);
  CHECK(max_abs_diff(out, out2) == 0.0);
  // interior pixels all see the same bias stack
  const float mid = out.at(0, 8, 12);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 20; ++x) CHECK(out.at(0, y, x) == mid);
}

TEST_CASE("depth head gradients") {
  S2MLConfig cfg = tiny_config();
  auto model = S2MLModel<double>::init(cfg, 15);
  // reduce the store to head params plus a feature input
  ParamStore<double> ps;
  ps.add("head.c1.w", model.params.at("head.c1.w"));
  ps.add("head.c1.b", model.params.at("head.c1.b"));
  ps.add("head.c2.w", model.params.at("head.c2.w"));
  ps.add("head.c2.b", model.params.at("head.c2.b"));
  Rng frng(16);
  ps.add("feature", randn<double>({4, 4, 4}, frng));
  Rng probe(17);
  auto rep = grad_check(
      ps,
      [](Tape<double>& t, BoundParams<double>& bp) {
        Val h = conv2d(t, bp[4], bp[0], bp[1], 1, 1);
        h = upsample_bilinear(t, h, 4);
        Val y = conv2d(t, h, bp[2], bp[3], 1, 1);
        Tensor<double> w(t.val(y).shape());
        Rng r(67);
        for (long i = 0; i < w.numel(); ++i) w[i] = r.uniform(-1.0, 1.0);
        return sum_all(t, mul_const(t, y, w));
      },
      15, 1e-5, probe);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("residual maps: zero difference goes through the head; full resolution") {
  auto model = S2MLModel<float>::init(tiny_config(), 19);
  auto [rgb, depth] = random_input<float>(16, 24, 20);
  auto [r_ff, r_fi] = model.residual_maps(rgb, depth, 1);
  CHECK(r_ff.shape() == std::vector<int>{1, 16, 24});
  CHECK(r_fi.shape() == std::vector<int>{1, 16, 24});

  CHECK_THROWS_AS(model.residual_maps(rgb, depth, 0), std::invalid_argument);
  CHECK_THROWS_AS(model.residual_maps(rgb, depth, 3), std::invalid_argument);

  // if F_sf equals the pair input, R_FF is exactly head(0)
  TensorF zero_feat({4, 4, 6});
  auto head_zero = model.apply_head(zero_feat);
  std::vector<PairTrace<float>> trace;
  model.forward(rgb, depth, &trace);
  TensorF diff(trace[0].f_sf.shape());
  for (long i = 0; i < diff.numel(); ++i) diff[i] = 0.0f;
  CHECK(max_abs_diff(model.apply_head(diff), head_zero) == 0.0);
}

TEST_CASE("pair wiring: pair 2 consumes DFT(F_out^1) and S_fused^1") {
  auto model = S2MLModel<float>::init(tiny_config(2), 21);
  auto [rgb, depth] = random_input<float>(16, 16, 22);
  std::vector<PairTrace<float>> trace;
  model.forward(rgb, depth, &trace);
  REQUIRE(trace.size() == 2);

  // the RGB-side spectrum of pair 2 is literally the fused spectrum of pair 1
  CHECK(max_abs_diff(trace[1].rgb_spec_re, trace[0].fused_re) == 0.0);
  CHECK(max_abs_diff(trace[1].rgb_spec_im, trace[0].fused_im) == 0.0);

  // the depth-side spectrum of pair 2 is the DFT of pair 1's spatial output
  Tape<float> t;
  SpecVal s = dft2_t(t, t.leaf(trace[0].f_out));
  CHECK(max_abs_diff(trace[1].depth_spec_re, t.val(s.real)) == 0.0);
  CHECK(max_abs_diff(trace[1].depth_spec_im, t.val(s.imag)) == 0.0);

  // and pair 2's depth-side spatial input is pair 1's output
  CHECK(max_abs_diff(trace[1].f_depth_in, trace[0].f_out) == 0.0);
}

TEST_CASE("all six variants run and produce identical output shapes") {
  auto [rgb, depth] = random_input<float>(16, 16, 23);
  std::vector<int> ref_shape;
  for (auto v :
       {Variant::full, Variant::v1, Variant::v2, Variant::v3, Variant::v4, Variant::v5}) {
    auto model = S2MLModel<float>::init(tiny_config(2, v), 24);
    auto pred = model.forward(rgb, depth);
    if (ref_shape.empty()) ref_shape = pred.shape();
    CHECK(pred.shape() == ref_shape);
    CHECK(pred.all_finite());
  }
}

TEST_CASE("apply_variant validates and carries shared parameters over") {
  auto full = S2MLModel<float>::init(tiny_config(2, Variant::full), 25);
  S2MLConfig v3cfg = tiny_config(2, Variant::v3);
  auto v3 = apply_variant(v3cfg, full);
  CHECK(v3.cfg.variant == Variant::v3);
  // stems, head, spatial modules and the shared phase-attention conv carry over
  CHECK(max_abs_diff(v3.params.at("head.c1.w"), full.params.at("head.c1.w")) == 0.0);
  CHECK(max_abs_diff(v3.params.at("pair0.spatial.agg.w"),
                     full.params.at("pair0.spatial.agg.w")) == 0.0);
  CHECK(max_abs_diff(v3.params.at("pair0.freq.phase_attn.w"),
                     full.params.at("pair0.freq.phase_attn.w")) == 0.0);
  // the amplitude path is gone
  CHECK(!v3.params.has("pair0.freq.amp_fuse.w"));
  CHECK(v3.params.total_params() < full.params.total_params());
}

TEST_CASE("end-to-end gradients on a small double-precision model") {
  S2MLConfig cfg = tiny_config(2);
  auto model = S2MLModel<double>::init(cfg, 26);
  auto [rgb, depth] = random_input<double>(16, 16, 27);
  TensorD gt = depth;
  for (long i = 0; i < gt.numel(); ++i)
    if (gt[i] == 0.0) gt[i] = 3.0;

  Rng probe(28);
  auto rep = grad_check(
      model.params,
      [&model, rgb, depth, gt](Tape<double>& t, BoundParams<double>& bp) {
        Val pred = model.forward_t(t, bp, rgb, depth);
        return total_loss_t(t, pred, gt);
      },
      3, 1e-5, probe);
  CAPTURE(rep.worst_param);
  CAPTURE(rep.worst_index);
  CHECK(rep.max_rel_err < 1e-3);
}
