// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end checks shared by the acceptance runner and the command-line tool.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fmt/format.h"
#include "json.hpp"
#include "raptr/complexity.hpp"
#include "raptr/grad_check.hpp"
#include "raptr/harness.hpp"
#include "raptr/hungarian.hpp"

namespace raptr::suites {

struct Outcome {
  explicit Outcome(std::string name) : id(std::move(name)) {}

  std::string id;
  bool pass = false;
  std::string summary;              // one line
  std::vector<std::string> detail;  // supporting lines
  nlohmann::json data = nlohmann::json::object();
  double seconds = 0.0;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// complexity

inline Outcome complexity_check() {
  Stopwatch sw;
  Outcome o("complexity");
  struct Want {
    std::uint64_t views, u2, u3;
    Rational ratio, savings;
    const char* ratio_text;
    const char* savings_text;
  };
  const std::vector<Want> want = {
      {2, 160, 150, Rational::make(15, 16), Rational::make(1, 16), "0.94", "6.25%"},
      {5, 400, 330, Rational::make(33, 40), Rational::make(7, 40), "0.83", "17.5%"},
      {10, 800, 630, Rational::make(63, 80), Rational::make(17, 80), "0.79", "21.3%"},
  };
  std::vector<ComplexityRow> rows;
  bool ok = true;
  for (const auto& w : want) {
    const ComplexityRow r = compare_mechanisms(10, w.views, 10);
    rows.push_back(r);
    ok = ok && r.units_2d == w.u2 && r.units_3d == w.u3 && r.ratio == w.ratio && r.savings == w.savings &&
         ratio_display(r) == w.ratio_text && savings_display(r) == w.savings_text;
  }
  o.seconds = sw.seconds();
  o.pass = ok && o.seconds < 1.0;
  std::istringstream table(complexity_table(rows));
  for (std::string line; std::getline(table, line);) o.detail.push_back(line);
  o.summary = fmt::format("V=2/5/10 ratios {}/{}/{}, savings {}/{}/{} ({:.3f} s)", ratio_display(rows[0]),
                          ratio_display(rows[1]), ratio_display(rows[2]), savings_display(rows[0]),
                          savings_display(rows[1]), savings_display(rows[2]), o.seconds);
  for (const auto& r : rows) o.data["rows"].push_back(to_json(r));
  return o;
}

// ---------------------------------------------------------------------------
// gradients

struct GradCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Var(Tape&, const std::vector<Var>&)> f;
  double lo = -1.0, hi = 1.0;
};

// Weighted readout so every output coordinate contributes distinctly.
inline Var readout(Tape& t, Var y) {
  Tensor w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return ops::sum(ops::mul(y, t.constant(w)));
}

inline std::vector<GradCase> primitive_cases() {
  using namespace ops;
  const CalibRig rig = CalibRig::desk_default();
  const SceneExtents ext;
  const TemplateKeypoints tk = make_template_keypoints(SkeletonId::hiber14);
  const Tensor templ = make_template({0.2, 0.9, 4.0, Frame::world}, tk);
  // label keypoints: the template seen by the desk camera
  const Keypoints2D label = project_to_image(transform_pose(templ, camera_from_world(rig)), rig.intrinsics);
  const OksConfig oks{oks_sigmas(SkeletonId::hiber14)};
  const std::vector<bool> all(14, true);
  return {
      {"add", {{3, 4}, {3, 4}}, [](Tape& t, auto& v) { return readout(t, add(v[0], v[1])); }},
      {"sub", {{3, 4}, {3, 4}}, [](Tape& t, auto& v) { return readout(t, sub(v[0], v[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape& t, auto& v) { return readout(t, mul(v[0], v[1])); }},
      {"div", {{3, 4}, {3, 4}}, [](Tape& t, auto& v) { return readout(t, div(v[0], v[1])); }, 0.5, 2.0},
      {"add_bias", {{3, 4}, {4}}, [](Tape& t, auto& v) { return readout(t, add_bias(v[0], v[1])); }},
      {"relu", {{3, 4}}, [](Tape& t, auto& v) { return readout(t, relu(v[0])); }},
      {"sigmoid", {{3, 4}}, [](Tape& t, auto& v) { return readout(t, sigmoid(v[0])); }, -4, 4},
      {"sigmoid_inverse", {{3, 4}}, [](Tape& t, auto& v) { return readout(t, sigmoid_inverse(v[0])); }, 0.05, 0.95},
      {"exp", {{3, 4}}, [](Tape& t, auto& v) { return readout(t, exp(v[0])); }},
      {"log", {{3, 4}}, [](Tape& t, auto& v) { return readout(t, log(v[0])); }, 0.2, 3.0},
      {"sqrt", {{3, 4}}, [](Tape& t, auto& v) { return readout(t, sqrt(v[0])); }, 0.2, 3.0},
      {"norm_rows", {{5, 3}}, [](Tape& t, auto& v) { return readout(t, norm_rows(v[0])); }},
      {"mean_rows", {{5, 3}}, [](Tape& t, auto& v) { return readout(t, mean_rows(v[0])); }},
      {"matmul", {{3, 4}, {4, 2}}, [](Tape& t, auto& v) { return readout(t, matmul(v[0], v[1])); }},
      {"matmul_bt", {{3, 4}, {5, 4}}, [](Tape& t, auto& v) { return readout(t, matmul_bt(v[0], v[1])); }},
      {"softmax", {{3, 6}}, [](Tape& t, auto& v) { return readout(t, softmax(v[0], 3)); }, -2, 2},
      {"layer_norm", {{3, 5}, {5}, {5}}, [](Tape& t, auto& v) { return readout(t, layer_norm(v[0], v[1], v[2])); }},
      {"gather_rows", {{4, 3}}, [](Tape& t, auto& v) { return readout(t, square(gather_rows(v[0], {3, 0, 3, 1}))); }},
      {"refine", {{3, 4}, {3, 4}}, [](Tape& t, auto& v) { return readout(t, refine(sigmoid(v[0]), v[1])); }, -2, 2},
      {"ffn", {{3, 4}, {4, 6}, {6}, {6, 2}, {2}},
       [](Tape& t, auto& v) { return readout(t, ffn(v[0], v[1], v[2], v[3], v[4])); }},
      {"im2col", {{5 * 6, 2}}, [](Tape& t, auto& v) { return readout(t, square(im2col_3x3_s2(v[0], 5, 6))); }},
      {"grouped_attention", {{6, 4}, {6, 4}, {6, 4}},
       [](Tape& t, auto& v) { return readout(t, grouped_attention(v[0], v[1], v[2], 2, 3)); }},
      {"view_mask", {{2 * 2, 2 * 2 * 3}, {2, 3, 2}},
       [](Tape& t, auto& v) {
         const ViewMaskShape sh{2, 2, 2, 3};
         return readout(t, apply_view_mask(softmax(reshape(v[0], Shape{sh.groups() * 2 * sh.rows()}), 2 * sh.rows()),
                                           sigmoid(v[1]), sh));
       }},
      {"view_mask_network", {{2, 4}, {4, 5}, {5}, {5, 6}, {6}},
       [](Tape& t, auto& v) { return readout(t, compute_view_mask(v[0], v[1], v[2], v[3], v[4], 3, 2.0)); }},
      {"world_transform", {{5, 3}},
       [ext, rig](Tape& t, auto& v) {
         return readout(t, transform_rows(denormalize_rows(sigmoid(v[0]), ext), rig.radar_to_world));
       }},
      {"projection", {{5, 3}},
       [rig](Tape& t, auto& v) {
         Var cam = add_bias(scale(v[0], 0.3), t.constant(Tensor::vector({0.0, 0.0, 4.0})));
         return readout(t, project_rows(cam, rig.intrinsics));
       }},
      {"t3d_loss", {{14, 3}}, [templ](Tape& t, auto& v) { return t3d_loss(add(v[0], t.constant(templ)), templ); }},
      {"g3d_loss", {{14, 3}},
       [templ](Tape& t, auto& v) { return g3d_loss(add(v[0], t.constant(templ)), {0.2, 0.9, 4.0, Frame::world}); }},
      {"k2d_loss", {{14, 2}},
       [label, rig, all](Tape& t, auto& v) {
         return k2d_loss(add(scale(v[0], 20.0), t.constant(label.uv)), label, all, rig.intrinsics.diagonal());
       }},
      {"oks_loss", {{14, 2}},
       [label, oks, all](Tape& t, auto& v) {
         return oks_loss(add(scale(v[0], 10.0), t.constant(label.uv)), label, oks, 120.0, all);
       }},
      {"focal_loss", {{5}},
       [](Tape&, auto& v) { return focal_loss(scale(v[0], 3.0), {true, false, false, true, false}); }},
  };
}

struct AttentionCase {
  std::string name;
  DeformAttnDims dims;
  bool mask = false;
};

// Scalar readout of one deformable attention block; query, reference, maps and parameters are all checked.
inline GradCheckResult check_attention_block(const AttentionCase& ac, std::uint64_t seed) {
  Rng rng(seed);
  const auto& dm = ac.dims;
  const std::size_t Q = 2, S = dm.scales;
  std::vector<LevelShape> levels;
  std::size_t rows = 0;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t s = 0; s < S; ++s) {
      levels.push_back({(5 + v) >> s, std::size_t{6} >> s});
      rows += levels.back().size();
    }
  ParamStore init;
  const DeformAttnParams names{"blk"};
  init_deform_attn(init, names, dm, rng, 0.05, ac.mask, 4);
  const auto pnames = init.names();
  std::vector<Tensor> inputs = {rng.uniform_tensor(Shape{Q, dm.d}, -1, 1),
                                rng.uniform_tensor(Shape{Q, 3 * dm.refs}, 0.25, 0.75),
                                rng.uniform_tensor(Shape{rows, dm.d}, -1, 1)};
  for (const auto& n : pnames) {
    Tensor v = init.value(n);
    for (auto& x : v.values()) x += rng.uniform(-0.2, 0.2);  // off the zero init so every path carries gradient
    inputs.push_back(v);
  }
  const Tensor ro = rng.uniform_tensor(Shape{Q, dm.d}, -1, 1);
  auto f = [&](Tape& t, const std::vector<Var>& v) {
    ParamStore store;
    for (std::size_t i = 0; i < pnames.size(); ++i) store.add(pnames[i], Tensor(v[3 + i].value().shape()));
    // route parameters through the checked leaves rather than the store
    auto P = [&](const std::string& n) {
      return v[3 + static_cast<std::size_t>(std::find(pnames.begin(), pnames.end(), n) - pnames.begin())];
    };
    Var off = ops::affine(v[0], P(names.off_w()), P(names.off_b()));
    Var w = ops::softmax(ops::affine(v[0], P(names.attn_w()), P(names.attn_b())), dm.softmax_group());
    Var loc;
    if (dm.variant == AttentionVariant::pseudo3d) {
      if (ac.mask) {
        Var m = ops::reshape(ops::sigmoid(ops::ffn(v[0], P(names.mask("w1")), P(names.mask("b1")),
                                                   P(names.mask("w2")), P(names.mask("b2")))),
                             Shape{Q, dm.offsets, 2});
        w = ops::apply_view_mask(w, m, {Q, dm.heads, dm.scales, dm.offsets});
      }
      loc = ops::pseudo3d_locations(v[1], off, Q, dm.heads, dm.scales, dm.offsets, dm.refs);
    } else {
      w = ops::scale(w, 0.5);
      loc = ops::decoupled_locations(v[1], off, Q, dm.heads, dm.scales, dm.offsets, dm.refs);
    }
    Var out = ops::deform_attention_from(v[2], loc, w, levels, dm, Q, P(names.val_w()), P(names.val_b()),
                                         P(names.out_w()), P(names.out_b()));
    return ops::sum(ops::mul(out, t.constant(ro)));
  };
  return grad_check(f, inputs);
}

inline ModelConfig gradcheck_model_config(AttentionVariant v) {
  ModelConfig c;
  c.frames = 2;
  c.width = 4;
  c.height = 4;
  c.depth = 5;
  c.scales = 1;
  c.d = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.pose_layers = 1;
  c.joint_layers = 1;
  c.queries = 2;
  c.joints = 3;
  c.enc_offsets = 2;
  c.joint_offsets = 4;
  c.ffn = 8;
  c.mask_hidden = 4;
  c.attention = v;
  return c;
}

/// Every model parameter against a readout of pose, refined joints and confidences.
inline GradCheckResult check_end_to_end(AttentionVariant v, std::uint64_t seed) {
  const CalibRig rig = CalibRig::desk_default();
  Model model(gradcheck_model_config(v));
  model.init(seed);
  Rng jr(derive_seed(seed, 1));
  for (auto& [_, e] : model.params().entries())
    for (auto& x : e.value.values()) x += jr.uniform(-0.1, 0.1);
  Rng rng(derive_seed(seed, 2));
  const auto& c = model.config();
  const RadarFrameStack stack{rng.uniform_tensor(Shape{c.frames, c.width, c.depth}, 0, 1),
                              rng.uniform_tensor(Shape{c.frames, c.height, c.depth}, 0, 1)};
  const Tensor rp = rng.uniform_tensor(Shape{2 * 3, 3}, -1, 1), rj = rng.uniform_tensor(Shape{6, 3}, -1, 1);
  const Tensor rc = rng.uniform_tensor(Shape{2}, -1, 1);
  auto f = [&](Tape& t, ParamStore&) {
    ForwardOptions opt;
    opt.subjects = std::vector<std::size_t>{0, 1};
    const ForwardResult r = model.forward_full(t, stack, rig, opt);
    Var a = ops::sum(ops::mul(r.pose_world.back(), t.constant(rp)));
    Var b = ops::sum(ops::mul(r.joint_world.back(), t.constant(rj)));
    Var cc = ops::sum(ops::mul(r.pose.conf, t.constant(rc)));
    return ops::add(ops::add(a, b), cc);
  };
  GradCheckOptions o;
  o.max_total = 150;
  o.seed = seed;
  return grad_check_params(f, model.params(), o);
}

struct GradRow {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t probes = 0;
  std::string worst;
  bool pass() const { return max_rel_error <= tolerance; }
};

inline std::vector<GradRow> gradient_suite(std::uint64_t seed0 = 0, std::uint64_t seeds = 10) {
  std::vector<GradRow> rows;
  auto fold = [](GradRow& row, const GradCheckResult& r, std::uint64_t seed) {
    row.probes += r.probes;
    if (r.max_rel_error >= row.max_rel_error) {
      row.max_rel_error = r.max_rel_error;
      row.worst = "seed " + std::to_string(seed) + " " + r.worst;
    }
  };
  for (const auto& c : primitive_cases()) {
    GradRow row{c.name, 0.0, 1e-5, 0, {}};
    for (std::uint64_t s = 0; s < seeds; ++s) {
      Rng rng(derive_seed(seed0 + 100, s));
      std::vector<Tensor> in;
      for (const auto& sh : c.shapes) in.push_back(rng.uniform_tensor(sh, c.lo, c.hi));
      fold(row, grad_check(c.f, in), s);
    }
    rows.push_back(row);
  }
  const std::vector<AttentionCase> blocks = {
      {"attention.pseudo3d", {4, 1, 1, 3, 1, AttentionVariant::pseudo3d}},
      {"attention.pseudo3d_multiscale_multihead", {6, 2, 2, 2, 1, AttentionVariant::pseudo3d}},
      {"attention.pseudo3d_multiref", {6, 2, 1, 3, 3, AttentionVariant::pseudo3d}},
      {"attention.pseudo3d_view_mask", {4, 2, 2, 2, 1, AttentionVariant::pseudo3d}, true},
      {"attention.decoupled2d", {4, 2, 2, 2, 1, AttentionVariant::decoupled2d}},
  };
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    GradRow row{blocks[b].name, 0.0, 1e-5, 0, {}};
    for (std::uint64_t s = 0; s < seeds; ++s) fold(row, check_attention_block(blocks[b], derive_seed(seed0 + 300 + b, s)), s);
    rows.push_back(row);
  }
  for (auto v : {AttentionVariant::pseudo3d, AttentionVariant::decoupled2d}) {
    GradRow row{"end_to_end." + to_string(v), 0.0, 1e-4, 0, {}};
    for (std::uint64_t s = 0; s < seeds; ++s) fold(row, check_end_to_end(v, seed0 + s), seed0 + s);
    rows.push_back(row);
  }
  return rows;
}

inline Outcome gradients_check(std::uint64_t seed0 = 0) {
  Stopwatch sw;
  Outcome o("gradients");
  const auto rows = gradient_suite(seed0);
  o.seconds = sw.seconds();
  double prim = 0, e2e = 0;
  bool ok = true;
  for (const auto& r : rows) {
    ok = ok && r.pass();
    double& agg = r.tolerance < 1e-4 ? prim : e2e;
    agg = std::max(agg, r.max_rel_error);
    o.detail.push_back(fmt::format("{:<42} max rel {:.2e} (tol {:.0e}, {} probes){}", r.name, r.max_rel_error,
                                   r.tolerance, r.probes, r.pass() ? "" : "  FAIL at " + r.worst));
    o.data["rows"].push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance}});
  }
  o.pass = ok && o.seconds < 120.0;
  o.summary = fmt::format("{} suites x 10 seeds; primitives max {:.2e} <= 1e-5, end-to-end max {:.2e} <= 1e-4 ({:.1f} s)",
                          rows.size(), prim, e2e, o.seconds);
  return o;
}

// ---------------------------------------------------------------------------
// matching

inline Outcome matching_check(std::uint64_t seed = 0) {
  Stopwatch sw;
  Outcome o("matching");
  bool ok = true;
  std::size_t total = 0;
  for (std::size_t n = 2; n <= 6; ++n) {
    std::size_t agree = 0;
    Rng rng(derive_seed(seed, n));
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor c = rng.uniform_tensor(Shape{n, n}, 0, 10);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = INFINITY;
      do {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += c(i, perm[i]);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const MatchResult m = hungarian(c);
      double got = 0;
      for (auto [i, j] : m.pairs) got += c(i, j);  // pairs are sorted by row: same summation order
      if (m.pairs.size() == n && got == best) ++agree;
    }
    ok = ok && agree == 100;
    total += agree;
    o.detail.push_back(fmt::format("n={}: {}/100 equal to the brute-force minimum", n, agree));
  }
  o.seconds = sw.seconds();
  o.pass = ok && o.seconds < 10.0;
  o.summary = fmt::format("{}/500 random matrices (n=2..6) match the permutation minimum exactly ({:.2f} s)", total,
                          o.seconds);
  return o;
}

// ---------------------------------------------------------------------------
// normalization

inline double group_sum_error(const Tensor& w, std::size_t group) {
  double worst = 0;
  for (std::size_t g = 0; g < w.size() / group; ++g) {
    double s = 0;
    for (std::size_t i = 0; i < group; ++i) s += w[g * group + i];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

inline Outcome normalization_check(std::uint64_t seed = 0, int draws = 1000) {
  Stopwatch sw;
  Outcome o("normalization");
  std::vector<std::pair<std::string, double>> worst;
  // single-scale, single-head
  {
    Rng rng(derive_seed(seed, 1));
    double e = 0;
    for (int t = 0; t < draws; ++t) {
      const std::size_t d = 1 + rng.index(8), N = 1 + rng.index(8);
      const Tensor q = rng.normal_tensor(Shape{d}, 2.0), w = rng.normal_tensor(Shape{d, 2 * N}, 2.0);
      const Tensor b = rng.normal_tensor(Shape{2 * N}, 2.0);
      e = std::max(e, group_sum_error(propose_weights(q, w, b, N), 2 * N));
    }
    worst.emplace_back("base", e);
  }
  // multi-scale multi-head, then the view mask in every pattern
  const std::vector<std::pair<std::string, std::optional<ViewMaskMode>>> kinds = {
      {"multi_head", std::nullopt},
      {"mask.both", ViewMaskMode::both},
      {"mask.horizontal", ViewMaskMode::horizontal},
      {"mask.vertical", ViewMaskMode::vertical},
      {"mask.random", ViewMaskMode::random},
      {"mask.adaptive", ViewMaskMode::adaptive},
  };
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    Rng rng(derive_seed(seed, 10 + k));
    double e = 0;
    for (int t = 0; t < draws; ++t) {
      const std::size_t M = 1 + rng.index(3), S = 1 + rng.index(2), N = 1 + rng.index(4), Q = 1 + rng.index(3);
      const DeformAttnDims dm{2 * M, M, S, N, 1, AttentionVariant::pseudo3d};
      ParamStore store;
      const DeformAttnParams p{"n"};
      init_deform_attn(store, p, dm, rng, 0.05, true, 3);
      for (auto& [_, en] : store.entries())
        for (auto& x : en.value.values()) x += rng.normal(0, 1.5);
      std::vector<LevelShape> levels;
      std::size_t rows = 0;
      for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t s = 0; s < S; ++s) {
          levels.push_back({std::size_t{4} >> s, std::size_t{5} >> s});
          rows += levels.back().size();
        }
      Tape tp;
      Var q = tp.constant(rng.normal_tensor(Shape{Q, dm.d}, 1.0));
      Var ref = tp.constant(rng.uniform_tensor(Shape{Q, 3}, 0, 1));
      Var maps = tp.constant(rng.normal_tensor(Shape{rows, dm.d}, 1.0));
      std::optional<Var> mask;
      const auto mode = kinds[k].second;
      if (mode == ViewMaskMode::adaptive)
        mask = ops::view_mask_for(q, store, p, dm, rng.uniform(0.5, 50.0));
      else if (mode)
        mask = tp.constant(fixed_view_mask(*mode, Q, N, &rng));
      DeformAttnTrace tr;
      ops::deform_attention(q, ref, maps, levels, dm, store, p, mask, &tr);
      e = std::max(e, group_sum_error(tr.weights.value(), dm.softmax_group()));
    }
    worst.emplace_back(kinds[k].first, e);
  }
  bool ok = true;
  double all = 0;
  for (const auto& [name, e] : worst) {
    ok = ok && e <= 1e-12;
    all = std::max(all, e);
    o.detail.push_back(fmt::format("{:<16} max |sum - 1| = {:.2e} over {} draws", name, e, draws));
    o.data[name] = e;
  }
  o.seconds = sw.seconds();
  o.pass = ok;
  o.summary = fmt::format("weights sum to 1 within {:.2e} <= 1e-12 (base, multi-head, 5 view-mask patterns)", all);
  return o;
}

// ---------------------------------------------------------------------------
// depth ambiguity

inline Outcome depth_ambiguity_check(std::uint64_t seed = 0, int trials = 50) {
  Stopwatch sw;
  Outcome o("depth_ambiguity");
  const CalibRig rig = CalibRig::desk_default();
  const RigidTransform cw = camera_from_world(rig), wc = cw.inverse();
  const TemplateKeypoints tk = make_template_keypoints(SkeletonId::hiber14);
  const OksConfig cfg{oks_sigmas(SkeletonId::hiber14)};
  double d2 = 0, dk = 0, min3 = INFINITY, shift_err = 0;
  SceneSpec spec;
  const auto lo = spec.walk_lo(), hi = spec.walk_hi();
  auto pose_in_view = [&](Rng& rng) {
    BodyPose b;
    b.heading = rng.uniform(-M_PI, M_PI);
    b.arm_swing_l = rng.uniform(-0.5, 0.5);
    b.leg_swing_r = rng.uniform(-0.4, 0.4);
    Tensor p = body_joints(SkeletonId::hiber14, b);
    const auto g = rig.radar_to_world.apply(rng.uniform(lo[0], hi[0]), 0, rng.uniform(lo[1], hi[1]));
    for (std::size_t k = 0; k < p.rows(); ++k) {
      p(k, 0) += g[0];
      p(k, 2) += g[2];
    }
    return p;
  };
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    const Tensor truth = pose_in_view(rng);
    const BBox3D box = enclosing_bbox(truth).padded(0.05);
    const Keypoints2D kp = project_to_image(transform_pose(truth, cw), rig.intrinsics);
    const SubjectLabel lab = make_subject_label(box, tk, kp, rig, truth);
    const Tensor pred = pose_in_view(rng);
    // scaling about the camera center moves every joint along its own ray; 0.5 m at the centroid
    const Tensor cam = transform_pose(pred, cw);
    const Point3D c = pose_centroid(cam);
    const double alpha = 1.0 + 0.5 / std::hypot(c.x, c.y, c.z);
    Tensor moved_cam = cam;
    for (auto& v : moved_cam.values()) v *= alpha;
    const Tensor moved = transform_pose(moved_cam, wc);
    shift_err = std::max(shift_err, std::abs(distance(pose_centroid(moved), pose_centroid(pred)) - 0.5));
    const auto uv0 = project_to_image(cam, rig.intrinsics), uv1 = project_to_image(moved_cam, rig.intrinsics);
    const double diag = rig.intrinsics.diagonal();
    d2 = std::max(d2, std::abs(k2d_loss(uv0.uv, lab.keypoints, diag) - k2d_loss(uv1.uv, lab.keypoints, diag)));
    dk = std::max(dk, std::abs(oks_loss(uv0.uv, lab.keypoints, cfg, lab.oks_scale) -
                               oks_loss(uv1.uv, lab.keypoints, cfg, lab.oks_scale)));
    min3 = std::min({min3, std::abs(g3d_loss(moved, lab.gravity) - g3d_loss(pred, lab.gravity)),
                     std::abs(t3d_loss(moved, lab.template_world) - t3d_loss(pred, lab.template_world))});
  }
  o.seconds = sw.seconds();
  o.pass = d2 <= 1e-9 && dk <= 1e-9 && min3 > 0 && shift_err < 1e-9;
  o.summary = fmt::format("0.5 m ray shift over {} poses: |dK2D| {:.1e}, |dOKS| {:.1e} (<= 1e-9); min 3D change {:.3f} > 0",
                          trials, d2, dk, min3);
  o.data = {{"k2d_change", d2}, {"oks_change", dk}, {"min_3d_change", min3}};
  return o;
}

// ---------------------------------------------------------------------------
// fixed point

inline Outcome fixed_point_check(std::uint64_t seeds = 5) {
  Stopwatch sw;
  Outcome o("fixed_point");
  const CalibRig rig = CalibRig::desk_default();
  std::size_t checked = 0, mismatched = 0;
  for (auto v : {AttentionVariant::pseudo3d, AttentionVariant::decoupled2d})
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
      ModelConfig c = gradcheck_model_config(v);
      c.pose_layers = 3;
      c.joint_layers = 3;
      c.view_mask = v == AttentionVariant::pseudo3d ? ViewMaskMode::adaptive : ViewMaskMode::both;
      Model model(c);
      model.init(seed);
      Rng jr(seed);
      for (auto& [_, e] : model.params().entries())
        for (auto& x : e.value.values()) x += jr.uniform(-0.2, 0.2);
      model.zero_regression_heads();
      Rng rng(derive_seed(seed, 7));
      const RadarFrameStack stack{rng.uniform_tensor(Shape{c.frames, c.width, c.depth}, 0, 1),
                                  rng.uniform_tensor(Shape{c.frames, c.height, c.depth}, 0, 1)};
      Tape t;
      ForwardOptions opt;
      opt.subjects = std::vector<std::size_t>{1, 0};
      const ForwardResult r = model.forward_full(t, stack, rig, opt);
      const Tensor& init = r.pose.refs[0].value();
      for (const auto& p : r.pose.refs) {
        ++checked;
        mismatched += p.value().values() != init.values();
      }
      const std::size_t K = c.joints;
      for (const auto& j : r.joints.refs) {
        ++checked;
        bool same = true;
        for (std::size_t s = 0; s < r.joints.subjects.size(); ++s)
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t a = 0; a < 3; ++a)
              same = same && j.value()(s * K + k, a) == init(r.joints.subjects[s], 3 * k + a);
        mismatched += !same;
      }
    }
  o.seconds = sw.seconds();
  o.pass = checked > 0 && mismatched == 0;
  o.summary = fmt::format("{} decoder outputs compared bit-for-bit with the query-MLP initialization; {} differ",
                          checked, mismatched);
  return o;
}

// ---------------------------------------------------------------------------
// metric identities

inline Outcome metrics_check(std::uint64_t seed = 0) {
  Stopwatch sw;
  Outcome o("metrics");
  Rng rng(seed);
  double zero = 0, five = 0, axes = 0;
  for (int t = 0; t < 100; ++t) {
    const Tensor p = rng.uniform_tensor(Shape{17, 3}, -3, 3);
    Tensor q = p;
    for (std::size_t k = 0; k < q.rows(); ++k) {
      q(k, 0) += 0.03;
      q(k, 2) += 0.04;
    }
    zero = std::max(zero, mpjpe(p, p));
    five = std::max(five, std::abs(mpjpe(q, p) - 5.0));
    const auto a = mpjpe_per_axis(q, p);
    axes = std::max({axes, std::abs(a[0] - 3.0), std::abs(a[1]), std::abs(a[2] - 4.0)});
  }
  o.seconds = sw.seconds();
  o.pass = zero == 0.0 && five <= 1e-9 && axes <= 1e-9;
  o.summary = fmt::format("identical -> {:.1f} cm; (0.03, 0, 0.04) m shift -> 5.0 cm (err {:.1e}); axes (3, 0, 4) cm (err {:.1e})",
                          zero, five, axes);
  return o;
}

// ---------------------------------------------------------------------------
// learning

struct OverfitProtocol {
  std::uint64_t seed = 0;
  std::size_t frames = 64;
  std::size_t epochs = 100;
};

inline Outcome overfit_check(const OverfitProtocol& pr = {}, const EpochCallback& on_epoch = {}) {
  Stopwatch sw;
  Outcome o("overfit");
  const SceneSpec scene = desk_scene(pr.seed, pr.frames);
  const Dataset ds = generate_scene(scene);
  TrainConfig cfg = desk_config(scene);
  cfg.seed = pr.seed;
  cfg.val_stride = 0;  // every frame trains and is scored
  cfg.optim.epochs = pr.epochs;
  cfg.optim.patience = 0;
  const auto [frames, _] = split_frames(ds.frames.size(), 0);
  const double base = template_baseline(ds, frames).mpjpe;
  const TrainResult r = train(cfg, ds, on_epoch);
  const auto& ep = r.report.epochs;
  const double first = ep.empty() ? NAN : ep.front().total, last = ep.empty() ? NAN : ep.back().total;
  const double ratio = last / first, mp = r.report.final_metrics.mpjpe, gain = 1.0 - mp / base;
  o.seconds = sw.seconds();
  o.pass = !r.report.diverged && ratio <= 0.10 && gain >= 0.30 && o.seconds < 1800;
  o.summary = fmt::format("loss {:.3f} -> {:.3f} ({:.1f}% of epoch 1, need <= 10%); MPJPE {:.2f} cm vs template baseline "
                          "{:.2f} cm ({:.1f}% lower, need >= 30%); {:.0f} s",
                          first, last, 100 * ratio, mp, base, 100 * gain, o.seconds);
  const auto& m = r.report.final_metrics;
  o.detail.push_back(fmt::format("model axes (h, v, d) = ({:.2f}, {:.2f}, {:.2f}) cm", m.axis[0], m.axis[1], m.axis[2]));
  o.data = {{"loss_first", first}, {"loss_last", last}, {"mpjpe", mp}, {"baseline", base}, {"report", r.report.to_json()}};
  return o;
}

struct AblationProtocol {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t frames = 160;
  std::size_t epochs = 60;
};

/// Cell names: a loss preset, "decoupled2d" (full loss, decoupled attention), or "mask_<pattern>".
inline void apply_cell(TrainConfig& cfg, const std::string& cell) {
  if (cell == "decoupled2d") {
    cfg.model.attention = AttentionVariant::decoupled2d;
    cfg.model.view_mask = ViewMaskMode::both;
  } else if (cell.rfind("mask_", 0) == 0) {
    cfg.model.view_mask = view_mask_mode_from_string(cell.substr(5));
  } else {
    cfg.ablation = cell;
  }
}

inline std::vector<AblationCell> run_cells(const AblationProtocol& pr, const std::vector<std::string>& cells,
                                           const std::function<void(const std::string&)>& log = {}) {
  const SceneSpec scene = desk_scene(0, pr.frames);
  TrainConfig base = desk_config(scene);
  base.optim.epochs = pr.epochs;
  return run_ablation(base, scene, cells, pr.seeds, apply_cell,
                      [&](const std::string& c, std::uint64_t seed, const RunReport& r) {
                        if (log)
                          log(fmt::format("{:<12} seed {}  val MPJPE {:6.2f} cm  epochs {:3}  {:.0f} s", c, seed,
                                          r.final_metrics.mpjpe, r.epochs.size(), r.wall_seconds));
                      });
}

inline Outcome ablation_check(const AblationProtocol& pr = {}, const std::function<void(const std::string&)>& log = {}) {
  Stopwatch sw;
  Outcome o("ablation");
  const std::vector<std::string> names = {"full", "k2d_only", "no_t3d", "no_g3d", "decoupled2d"};
  const auto cells = run_cells(pr, names, log);
  auto mean = [&](const std::string& n) {
    return std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) { return c.name == n; })->mean();
  };
  const double full = mean("full"), k2d = mean("k2d_only"), nt = mean("no_t3d"), ng = mean("no_g3d");
  const bool order = full <= k2d && full <= nt && full <= ng;
  const bool worst = k2d >= nt && k2d >= ng && k2d >= 3.0 * full;
  for (const auto& c : cells) {
    o.detail.push_back(fmt::format("{:<12} {:6.2f} +- {:5.2f} cm", c.name, c.mean(), c.stddev()));
    o.data["cells"][c.name] = {{"mean", c.mean()}, {"std", c.stddev()}, {"per_seed", c.mpjpe}};
  }
  const double dec = mean("decoupled2d");
  o.seconds = sw.seconds();
  o.pass = order && worst;
  o.summary = fmt::format("val MPJPE over {} seeds: full {:.2f}, k2d_only {:.2f} ({:.1f}x), no_t3d {:.2f}, no_g3d {:.2f}; "
                          "full <= ablated: {}; k2d_only worst and >= 3x: {}; pseudo3d - decoupled2d = {:+.2f} cm",
                          pr.seeds.size(), full, k2d, k2d / full, nt, ng, order ? "yes" : "no", worst ? "yes" : "no",
                          full - dec);
  return o;
}

inline std::vector<std::string> check_ids() {
  return {"complexity", "gradients", "matching", "normalization", "depth_ambiguity",
          "overfit",    "ablation",  "fixed_point", "metrics"};
}

inline Outcome run_check(const std::string& id, const std::function<void(const std::string&)>& log = {}) {
  if (id == "complexity") return complexity_check();
  if (id == "gradients") return gradients_check();
  if (id == "matching") return matching_check();
  if (id == "normalization") return normalization_check();
  if (id == "depth_ambiguity") return depth_ambiguity_check();
  if (id == "overfit")
    return overfit_check({}, [&](const EpochRecord& e) {
      if (log && (e.epoch == 1 || e.epoch % 10 == 0)) log(fmt::format("epoch {:3}  loss {:.4f}", e.epoch, e.total));
    });
  if (id == "ablation") return ablation_check({}, log);
  if (id == "fixed_point") return fixed_point_check();
  if (id == "metrics") return metrics_check();
  throw ConfigError("unknown check '" + id + "'");
}

}  // namespace raptr::suites
