// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "raptr/harness.hpp"

namespace raptr {
namespace {

ParamStore scalar_store(double v, double g) {
  ParamStore s;
  s.add("w", Tensor::vector({v}));
  s.grad("w")[0] = g;
  return s;
}

TEST(Optimizer, ZeroGradientZeroDecayIsIdentity) {
  ParamStore s;
  Rng rng(1);
  s.add("a", rng.normal_tensor(Shape{3, 4}, 1.0));
  s.add("b", rng.normal_tensor(Shape{5}, 1.0));
  const ParamStore before = s;
  AdamState st;
  OptimConfig c;
  c.weight_decay = 0;
  for (int i = 0; i < 3; ++i) ASSERT_TRUE(optimizer_step(s, st, c, 1e-2).applied);
  for (const auto& n : s.names()) EXPECT_EQ(s.value(n).values(), before.value(n).values());
}

TEST(Optimizer, FirstStepIsLearningRate) {
  // m1 = (1-b1) g, v1 = (1-b2) g^2; bias correction leaves g / (|g| + eps)
  for (double g : {0.05, -0.02, 3e-3}) {
    ParamStore s = scalar_store(1.0, g);
    AdamState st;
    OptimConfig c;
    c.weight_decay = 0;
    c.clip = 0;
    optimizer_step(s, st, c, 1e-3);
    const double expect = 1.0 - 1e-3 * g / (std::abs(g) + c.eps);
    EXPECT_NEAR(s.value("w")[0], expect, 1e-15);
    EXPECT_NEAR(std::abs(s.value("w")[0] - 1.0), 1e-3, 1e-8);
  }
}

TEST(Optimizer, MatchesRecurrenceOracle) {
  OptimConfig c;
  c.clip = 0;
  c.weight_decay = 0.01;
  ParamStore s = scalar_store(0.7, 0.0);
  AdamState st;
  double w = 0.7, m = 0, v = 0;
  const double lr = 5e-3;
  const std::vector<double> gs = {0.3, -0.1, 0.05, 0.2, -0.4};
  for (std::size_t k = 0; k < gs.size(); ++k) {
    s.grad("w")[0] = gs[k];
    optimizer_step(s, st, c, lr);
    m = 0.9 * m + 0.1 * gs[k];
    v = 0.999 * v + 0.001 * gs[k] * gs[k];
    const double mh = m / (1 - std::pow(0.9, k + 1)), vh = v / (1 - std::pow(0.999, k + 1));
    w -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * w);
    EXPECT_NEAR(s.value("w")[0], w, 1e-14);
  }
  EXPECT_EQ(st.step, gs.size());
}

TEST(Optimizer, DecoupledDecayWithoutGradient) {
  ParamStore s = scalar_store(2.0, 0.0);
  AdamState st;
  OptimConfig c;
  c.weight_decay = 0.1;
  optimizer_step(s, st, c, 0.01);
  EXPECT_NEAR(s.value("w")[0], 2.0 * (1 - 0.01 * 0.1), 1e-15);
}

TEST(Optimizer, ClipScalesGlobalNorm) {
  ParamStore s;
  s.add("a", Tensor::vector({0, 0}));
  s.add("b", Tensor::vector({0}));
  s.grad("a")[0] = 0.6;
  s.grad("b")[0] = 0.8;  // global norm 1.0
  AdamState st;
  OptimConfig c;
  c.clip = 0.1;
  const StepReport r = optimizer_step(s, st, c, 1e-3);
  EXPECT_NEAR(r.grad_norm, 1.0, 1e-15);
  EXPECT_NEAR(r.clip_scale, 0.1, 1e-15);
  EXPECT_NEAR(st.m.at("a")[0], 0.1 * 0.06, 1e-15);
  EXPECT_NEAR(st.m.at("b")[0], 0.1 * 0.08, 1e-15);
  EXPECT_NEAR(st.v.at("b")[0], 0.001 * 0.08 * 0.08, 1e-15);

  // below the threshold nothing is scaled
  ParamStore small = scalar_store(0, 0.05);
  AdamState st2;
  EXPECT_EQ(optimizer_step(small, st2, c, 1e-3).clip_scale, 1.0);
}

TEST(Optimizer, NonFiniteGradientSkipsStep) {
  for (double bad : {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}) {
    ParamStore s = scalar_store(1.5, bad);
    AdamState st;
    const StepReport r = optimizer_step(s, st, OptimConfig{}, 1e-3);
    EXPECT_FALSE(r.applied);
    EXPECT_FALSE(r.diagnostic.empty());
    EXPECT_EQ(s.value("w")[0], 1.5);
    EXPECT_EQ(st.step, 0u);
  }
}

TEST(Schedule, Cosine) {
  OptimConfig c;
  c.lr = 1e-3;
  EXPECT_DOUBLE_EQ(cosine_lr(c, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_lr(c, 50, 100), 5e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(c, 100, 100), 0.0, 1e-18);
  EXPECT_NEAR(cosine_lr(c, 25, 100), 0.5e-3 * (1 + std::sqrt(0.5)), 1e-15);
  c.cosine = false;
  EXPECT_EQ(cosine_lr(c, 70, 100), 1e-3);
}

TEST(TrainConfig, AblationPresets) {
  const LossWeights base;
  const LossWeights k = ablation_weights("k2d_only");
  EXPECT_EQ(k.template_, 0.0);
  EXPECT_EQ(k.gravity, 0.0);
  EXPECT_EQ(k.kpt2d, base.kpt2d);
  EXPECT_EQ(k.oks, base.oks);
  EXPECT_EQ(k.cls, base.cls);
  EXPECT_EQ(ablation_weights("no_t3d").template_, 0.0);
  EXPECT_EQ(ablation_weights("no_t3d").gravity, base.gravity);
  EXPECT_EQ(ablation_weights("no_g3d").gravity, 0.0);
  EXPECT_EQ(ablation_weights("no_g3d").template_, base.template_);
  EXPECT_EQ(ablation_weights("full").kpt2d, base.kpt2d);
  EXPECT_THROW(ablation_weights("t3d_everywhere"), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = desk_config(desk_scene());
  c.seed = 42;
  c.ablation = "no_g3d";
  c.optim.lr = 3e-4;
  c.weights.kpt2d = 2.5;
  c.model.attention = AttentionVariant::decoupled2d;
  const TrainConfig r = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(r), to_json(c));
  EXPECT_EQ(config_hash(to_json(r)), config_hash(to_json(c)));

  auto bad = to_json(c);
  bad["optim"]["lr"] = 0.0;
  EXPECT_THROW(train_config_from_json(bad), ConfigError);
  bad = to_json(c);
  bad["val_stride"] = 1;
  EXPECT_THROW(train_config_from_json(bad), ConfigError);
  bad = to_json(c);
  bad["ablation"] = "nothing";
  EXPECT_THROW(train_config_from_json(bad), ConfigError);
  bad = to_json(c);
  bad["weights"] = {1, 2};
  EXPECT_THROW(train_config_from_json(bad), ConfigError);
}

TEST(Split, StrideHoldsOutEveryFifthFrame) {
  const auto [tr, va] = split_frames(10, 5);
  EXPECT_EQ(va, (std::vector<std::size_t>{4, 9}));
  EXPECT_EQ(tr.size(), 8u);
  const auto [all, none] = split_frames(7, 0);
  EXPECT_EQ(all.size(), 7u);
  EXPECT_TRUE(none.empty());
}

// ---------------------------------------------------------------------------

SceneSpec small_scene(std::uint64_t seed = 3) {
  SceneSpec s = desk_scene(seed, 10);
  s.width = 8;
  s.height = 6;
  s.depth = 10;
  return s;
}

TrainConfig small_config(const SceneSpec& s) {
  TrainConfig c = desk_config(s);
  c.model.scales = 1;
  c.model.d = 8;
  c.model.ffn = 8;
  c.model.pose_layers = 1;
  c.model.joint_layers = 1;
  c.model.mask_hidden = 4;
  c.optim.epochs = 3;
  c.optim.batch = 3;
  return c;
}

struct Fixture : ::testing::Test {
  SceneSpec scene = small_scene();
  Dataset ds = generate_scene(scene);
  TrainConfig cfg = small_config(scene);
};

TEST_F(Fixture, ZeroEpochsReportsUntrainedMetrics) {
  cfg.optim.epochs = 0;
  const TrainResult r = train(cfg, ds);
  EXPECT_TRUE(r.report.epochs.empty());
  EXPECT_FALSE(r.report.best_epoch);
  Model fresh = init_model(cfg, ds);
  const auto [_, val] = split_frames(ds.frames.size(), cfg.val_stride);
  EXPECT_EQ(evaluate(fresh, ds, val).to_json(), r.report.final_metrics.to_json());
}

TEST_F(Fixture, DeterministicPerSeed) {
  auto strip = [](nlohmann::json j) {
    j.erase("wall_seconds");
    return j;
  };
  const TrainResult a = train(cfg, ds), b = train(cfg, ds);
  EXPECT_EQ(strip(a.report.to_json()), strip(b.report.to_json()));
  for (const auto& n : a.model.params().names())
    EXPECT_EQ(a.model.params().value(n).values(), b.model.params().value(n).values());
  cfg.seed = 9;
  const TrainResult c = train(cfg, ds);
  EXPECT_NE(strip(a.report.to_json())["epochs"], strip(c.report.to_json())["epochs"]);
}

TEST_F(Fixture, EpochIndicesAndLossDecrease) {
  cfg.optim.epochs = 6;
  cfg.optim.patience = 0;
  const TrainResult r = train(cfg, ds);
  ASSERT_EQ(r.report.epochs.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(r.report.epochs[i].epoch, i + 1);
    const auto& e = r.report.epochs[i];
    EXPECT_NEAR(e.total, e.terms.weighted(cfg.effective_weights()), 1e-9 * (1 + e.total));
    EXPECT_TRUE(e.val_total.has_value());
  }
  EXPECT_LT(r.report.epochs.back().total, r.report.epochs.front().total);
  EXPECT_EQ(r.report.config_hash, config_hash(to_json(cfg)));
}

TEST_F(Fixture, EarlyStoppingKeepsBestValidationLoss) {
  cfg.optim.epochs = 8;
  cfg.optim.patience = 1;
  cfg.optim.lr = 2e-2;  // large steps make validation loss bounce
  const TrainResult r = train(cfg, ds);
  ASSERT_TRUE(r.report.best_epoch);
  double best = INFINITY;
  for (const auto& e : r.report.epochs) best = std::min(best, *e.val_total);
  EXPECT_EQ(*r.report.epochs[*r.report.best_epoch - 1].val_total, best);
  if (r.report.stopped_early) {
    EXPECT_LT(r.report.epochs.size(), 8u);
  }
  // restored parameters reproduce the best validation loss
  Model m = r.model;
  const auto [_, val] = split_frames(ds.frames.size(), cfg.val_stride);
  double v = 0;
  mean_loss(m, ds, val, loss_context(cfg, ds), &v);
  EXPECT_NEAR(v, best, 1e-12 * (1 + best));
}

TEST_F(Fixture, EvaluateMatchesReportAndCheckpoint) {
  TrainResult r = train(cfg, ds);
  const auto [_, val] = split_frames(ds.frames.size(), cfg.val_stride);
  EXPECT_EQ(evaluate(r.model, ds, val).to_json(), r.report.final_metrics.to_json());

  const auto dir = std::filesystem::temp_directory_path() / "raptr_harness_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.bin").string();
  r.model.save(path);
  EXPECT_EQ(evaluate_checkpoint(path, ds, val, &cfg.model).to_json(), r.report.final_metrics.to_json());
  ModelConfig other = cfg.model;
  other.d = 16;
  EXPECT_THROW(evaluate_checkpoint(path, ds, val, &other), ContractViolation);
  std::filesystem::remove_all(dir);
}

TEST_F(Fixture, GroundTruthPredictionsScoreZero) {
  const auto [tr, _] = split_frames(ds.frames.size(), 0);
  const MetricReport m = evaluate_predictions(ds, tr, [](const FrameRecord& f) {
    std::vector<Tensor> out;
    for (const auto& s : f.subjects) out.push_back(s.pose_world);
    return out;
  });
  EXPECT_EQ(m.mpjpe, 0.0);
  EXPECT_EQ(m.pairs.size(), ds.frames.size());
  EXPECT_EQ(m.missed, 0u);
}

TEST_F(Fixture, NonFinitePredictionsCountAsMissed) {
  const MetricReport m = evaluate_predictions(ds, {0, 1}, [](const FrameRecord& f) {
    Tensor p = f.subjects[0].pose_world;
    if (f.index == 1) p(0, 0) = std::numeric_limits<double>::quiet_NaN();
    return std::vector<Tensor>{p};
  });
  EXPECT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.missed, 1u);
  EXPECT_EQ(m.mpjpe, 0.0);
}

TEST_F(Fixture, TemplateBaselineOracle) {
  const auto [tr, _] = split_frames(ds.frames.size(), 0);
  const MetricReport m = template_baseline(ds, tr);
  double acc = 0;
  std::size_t n = 0;
  for (const auto& f : ds.frames)
    for (const auto& s : f.subjects) {
      const BBox3D& b = s.bbox;
      const auto lo = b.min_corner(), hi = b.max_corner();
      for (std::size_t k = 0; k < s.pose_world.rows(); ++k) {
        double d2 = 0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double t = ds.templ.offsets(k, a) + (lo[a] + hi[a]) / 2;
          d2 += (t - s.pose_world(k, a)) * (t - s.pose_world(k, a));
        }
        acc += std::sqrt(d2);
        ++n;
      }
    }
  EXPECT_NEAR(m.mpjpe, 100 * acc / static_cast<double>(n), 1e-9);
}

TEST_F(Fixture, TemplatePriorStandsOnFloorAtRoomCenter) {
  const Tensor p = template_prior(ds, cfg.model.extents);
  const Tensor w = transform_pose(denormalize_coords(p, cfg.model.extents), ds.spec.rig.radar_to_world);
  double ymin = INFINITY;
  for (std::size_t k = 0; k < w.rows(); ++k) ymin = std::min(ymin, w(k, 1));
  EXPECT_NEAR(ymin, 0.0, 1e-9);
  const Point3D c = pose_centroid(w);
  const auto& e = cfg.model.extents;
  const auto center = ds.spec.rig.radar_to_world.apply((e.lo[0] + e.hi[0]) / 2, 0, (e.lo[2] + e.hi[2]) / 2);
  // zero-mean offsets: the centroid is straight above the room center (the rig yaws about the vertical)
  EXPECT_NEAR(c.x, center[0], 1e-9);
  EXPECT_NEAR(c.z, center[2], 1e-9);
}

TEST_F(Fixture, DivergenceRestoresLastGoodParameters) {
  ds.frames[2].stack.hor.fill(std::numeric_limits<double>::quiet_NaN());
  cfg.optim.batch = 10;
  cfg.val_stride = 0;
  const TrainResult r = train(cfg, ds);
  EXPECT_TRUE(r.report.diverged);
  EXPECT_FALSE(r.report.diagnostics.empty());
  const Model fresh = init_model(cfg, ds);
  for (const auto& n : fresh.params().names())
    EXPECT_EQ(r.model.params().value(n).values(), fresh.params().value(n).values());
}

TEST(Ablation, RunnerCollectsEveryCell) {
  const SceneSpec s = small_scene(1);
  TrainConfig c = small_config(s);
  c.optim.epochs = 1;
  std::size_t runs = 0;
  const auto cells = run_ablation(
      c, s, {"full", "k2d_only"}, {1, 2}, [](TrainConfig& cfg, const std::string& n) { cfg.ablation = n; },
      [&](const std::string&, std::uint64_t, const RunReport&) { ++runs; });
  EXPECT_EQ(runs, 4u);
  ASSERT_EQ(cells.size(), 2u);
  for (const auto& cell : cells) {
    ASSERT_EQ(cell.mpjpe.size(), 2u);
    EXPECT_NEAR(cell.mean(), (cell.mpjpe[0] + cell.mpjpe[1]) / 2, 1e-12);
    EXPECT_NEAR(cell.stddev(), std::abs(cell.mpjpe[0] - cell.mpjpe[1]) / std::sqrt(2.0), 1e-12);
  }
}

}  // namespace
}  // namespace raptr
