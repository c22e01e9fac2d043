// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "raptr/grad_check.hpp"
#include "raptr/model.hpp"
#include "test_util.hpp"

namespace raptr {
namespace {

using testing::rand_tensor;

ModelConfig tiny_config(AttentionVariant v = AttentionVariant::pseudo3d, ViewMaskMode m = ViewMaskMode::both) {
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
  c.attention = v;
  c.view_mask = m;
  c.mask_hidden = 4;
  c.offset_radius = 0.1;
  return c;
}

RadarFrameStack random_stack(const ModelConfig& c, Rng& rng) {
  return {rand_tensor(rng, {c.frames, c.width, c.depth}, 0, 1), rand_tensor(rng, {c.frames, c.height, c.depth}, 0, 1)};
}

void jitter(ParamStore& s, Rng& rng, double r) {
  for (auto& [_, e] : s.entries())
    for (auto& v : e.value.values()) v += rng.uniform(-r, r);
}

// ---------------------------------------------------------------------------
// grouped self-attention

// softmax(q k^T / sqrt(dh)) v head by head, group by group.
Tensor naive_grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                               std::size_t group) {
  const std::size_t n = q.rows(), w = q.cols(), dh = w / heads;
  Tensor out(Shape{n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t g0 = i / group * group;
      std::vector<double> s(group);
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < group; ++j) {
        double a = 0;
        for (std::size_t c = 0; c < dh; ++c) a += q(i, h * dh + c) * k(g0 + j, h * dh + c);
        s[j] = a / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < group; ++j)
        for (std::size_t c = 0; c < dh; ++c) out(i, h * dh + c) += s[j] / z * v(g0 + j, h * dh + c);
    }
  return out;
}

TEST(SelfAttention, MatchesNaiveOracle) {
  Rng rng(3);
  for (auto [heads, group] : {std::pair<std::size_t, std::size_t>{1, 6}, {2, 3}, {3, 2}, {6, 1}}) {
    const Tensor q = rand_tensor(rng, {6, 6}), k = rand_tensor(rng, {6, 6}), v = rand_tensor(rng, {6, 6});
    Tape t;
    const Tensor got = ops::grouped_attention(t.constant(q), t.constant(k), t.constant(v), heads, group).value();
    const Tensor want = naive_grouped_attention(q, k, v, heads, group);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(SelfAttention, GroupsDoNotInteract) {
  Rng rng(4);
  Tensor q = rand_tensor(rng, {4, 4}), k = rand_tensor(rng, {4, 4}), v = rand_tensor(rng, {4, 4});
  Tape t;
  const Tensor a = ops::grouped_attention(t.constant(q), t.constant(k), t.constant(v), 2, 2).value();
  for (std::size_t c = 0; c < 4; ++c) {
    k(3, c) += 5.0;
    v(2, c) -= 3.0;
  }
  const Tensor b = ops::grouped_attention(t.constant(q), t.constant(k), t.constant(v), 2, 2).value();
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(SelfAttention, SingletonGroupReturnsValue) {
  Rng rng(5);
  const Tensor q = rand_tensor(rng, {3, 4}), k = rand_tensor(rng, {3, 4}), v = rand_tensor(rng, {3, 4});
  Tape t;
  const Tensor out = ops::grouped_attention(t.constant(q), t.constant(k), t.constant(v), 2, 1).value();
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(out[i], v[i]);
}

TEST(SelfAttention, GradientsTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(50, seed));
    const Tensor readout = rand_tensor(rng, {6, 4});
    auto f = [&](Tape& t, const std::vector<Var>& v) {
      return ops::sum(ops::mul(ops::grouped_attention(v[0], v[1], v[2], 2, 3), t.constant(readout)));
    };
    const auto r = grad_check(f, {rand_tensor(rng, {6, 4}), rand_tensor(rng, {6, 4}), rand_tensor(rng, {6, 4})});
    EXPECT_LE(r.max_rel_error, 1e-5) << r.worst;
  }
}

TEST(SelfAttention, RejectsRaggedGroups) {
  Tape t;
  Var x = t.constant(Tensor(Shape{5, 4}));
  EXPECT_THROW(ops::grouped_attention(x, x, x, 2, 2), ContractViolation);
  EXPECT_THROW(ops::grouped_attention(x, x, x, 3, 5), ContractViolation);
}

// ---------------------------------------------------------------------------
// configuration

TEST(ModelConfig, JsonRoundTripAndHash) {
  ModelConfig c = tiny_config(AttentionVariant::pseudo3d, ViewMaskMode::adaptive);
  c.extents.hi[2] = 6.5;
  const auto j = to_json(c);
  const ModelConfig back = model_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(config_hash(j), config_hash(to_json(back)));
  ModelConfig other = c;
  other.d = 16;
  EXPECT_NE(config_hash(j), config_hash(to_json(other)));
  EXPECT_EQ(config_hash(j).size(), 16u);
}

TEST(ModelConfig, Fnv1aReferenceValues) {
  // published 64-bit FNV-1a vectors
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cULL), "af63dc4c8601ec8c");
}

TEST(ModelConfig, RejectsIndivisibleWidth) {
  ModelConfig c = tiny_config();
  c.d = 10;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Model{c}, ConfigError);
}

TEST(ModelConfig, RejectsMaskOnDecoupled) {
  EXPECT_THROW(tiny_config(AttentionVariant::decoupled2d, ViewMaskMode::adaptive).validate(), ConfigError);
}

TEST(ModelConfig, LevelShapesHalveWithCeiling) {
  ModelConfig c = tiny_config();
  c.width = 9;
  c.depth = 5;
  c.scales = 3;
  EXPECT_EQ(c.level(0, 0).rows, 5u);
  EXPECT_EQ(c.level(0, 0).cols, 3u);
  EXPECT_EQ(c.level(0, 2).rows, 2u);
  EXPECT_EQ(c.level(0, 2).cols, 1u);
  EXPECT_EQ(c.levels().size(), 6u);
}

TEST(Embeddings, SinusoidalReferenceEntries) {
  const Tensor pe = sinusoidal_embedding(2, 3, 8);
  ASSERT_EQ(pe.rows(), 6u);
  for (double v : pe.values()) {
    EXPECT_LE(std::abs(v), 1.0);
    EXPECT_TRUE(std::isfinite(v));
  }
  // distinct positions get distinct codes
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) {
      double diff = 0;
      for (std::size_t c = 0; c < 8; ++c) diff += std::abs(pe(a, c) - pe(b, c));
      EXPECT_GT(diff, 1e-6);
    }
}

TEST(Embeddings, PixelCentersAreNormalized) {
  const Tensor c = pixel_centers({{2, 4}});
  ASSERT_EQ(c.rows(), 8u);
  EXPECT_DOUBLE_EQ(c(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(c(0, 1), 0.125);
  EXPECT_DOUBLE_EQ(c(7, 0), 0.75);
  EXPECT_DOUBLE_EQ(c(7, 1), 0.875);
}

// ---------------------------------------------------------------------------
// forward pass

TEST(Model, ForwardShapesAllVariants) {
  const CalibRig rig = CalibRig::desk_default();
  for (auto [v, m] : {std::pair{AttentionVariant::pseudo3d, ViewMaskMode::both},
                      {AttentionVariant::pseudo3d, ViewMaskMode::adaptive},
                      {AttentionVariant::pseudo3d, ViewMaskMode::random},
                      {AttentionVariant::pseudo3d, ViewMaskMode::horizontal},
                      {AttentionVariant::pseudo3d, ViewMaskMode::vertical},
                      {AttentionVariant::decoupled2d, ViewMaskMode::both}}) {
    ModelConfig c = tiny_config(v, m);
    c.scales = 2;
    Model model(c);
    model.init(7);
    Rng rng(1);
    const RadarFrameStack stack = random_stack(c, rng);
    Tape t;
    ForwardOptions opt;
    opt.rng = &rng;
    const ForwardResult r = model.forward_full(t, stack, rig, opt);
    ASSERT_EQ(r.pose.refs.size(), c.pose_layers + 1);
    EXPECT_EQ(r.pose.refs.back().value().rows(), c.queries);
    EXPECT_EQ(r.pose.refs.back().value().cols(), 3 * c.joints);
    EXPECT_EQ(r.pose.conf.value().size(), c.queries);
    ASSERT_FALSE(r.joints.empty());
    ASSERT_EQ(r.joint_world.size(), c.joint_layers + 1);
    EXPECT_EQ(r.joint_world.back().value().rows(), r.joints.subjects.size() * c.joints);
    for (double x : r.joint_world.back().value().values()) EXPECT_TRUE(std::isfinite(x));
    for (double x : r.pose.refs.back().value().values()) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  }
}

TEST(Model, RejectsMismatchedStack) {
  Model model(tiny_config());
  model.init(0);
  Rng rng(0);
  RadarFrameStack s = random_stack(model.config(), rng);
  s.hor = Tensor(Shape{2, 5, 5});
  Tape t;
  EXPECT_THROW(model.encode(t, s), ConfigError);
}

TEST(Model, DeterministicPerSeed) {
  const CalibRig rig = CalibRig::desk_default();
  auto run = [&](std::uint64_t seed) {
    Model model(tiny_config());
    model.init(seed);
    Rng jr(seed + 1);
    jitter(model.params(), jr, 0.1);
    Rng rng(9);
    Tape t;
    return model.forward_full(t, random_stack(model.config(), rng), rig).joint_world.back().value();
  };
  const Tensor a = run(11), b = run(11), c = run(12);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), c.values());
}

TEST(Model, ZeroHeadsAreAnExactFixedPoint) {
  const CalibRig rig = CalibRig::desk_default();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig c = tiny_config();
    c.pose_layers = 3;
    c.joint_layers = 3;
    Model model(c);
    model.init(seed);
    Rng jr(seed);
    jitter(model.params(), jr, 0.2);
    model.zero_regression_heads();
    Rng rng(seed);
    Tape t;
    const ForwardResult r = model.forward_full(t, random_stack(c, rng), rig);
    for (std::size_t l = 1; l < r.pose.refs.size(); ++l)
      EXPECT_EQ(r.pose.refs[l].value().values(), r.pose.refs[0].value().values());
    for (std::size_t l = 1; l < r.joints.refs.size(); ++l)
      EXPECT_EQ(r.joints.refs[l].value().values(), r.joints.refs[0].value().values());
  }
}

TEST(Model, RefinementTelescopesInLogitSpace) {
  // logit(P^L) = logit(P^0) + sum of deltas away from the clamp
  const CalibRig rig = CalibRig::desk_default();
  Model model(tiny_config());
  model.init(2);
  Rng jr(2);
  jitter(model.params(), jr, 0.05);
  Rng rng(2);
  Tape t;
  const ForwardResult r = model.forward_full(t, random_stack(model.config(), rng), rig);
  const Tensor& p0 = r.pose.refs.front().value();
  const Tensor& pl = r.pose.refs.back().value();
  for (std::size_t i = 0; i < p0.size(); ++i) {
    double logit = std::log(p0[i] / (1 - p0[i]));
    for (Var d : r.pose.deltas) logit += d.value()[i];
    EXPECT_NEAR(std::log(pl[i] / (1 - pl[i])), logit, 1e-9);
  }
}

TEST(Model, PriorInitializesReferencePoses) {
  ModelConfig c = tiny_config();
  Model model(c);
  Tensor prior(Shape{c.joints, 3});
  for (std::size_t i = 0; i < prior.size(); ++i) prior[i] = 0.2 + 0.05 * static_cast<double>(i);
  model.init(0, &prior);
  // tiny query embeddings: the bias dominates the initialization MLP
  model.params().value("pose.init.w2").fill(0.0);
  Rng rng(0);
  Tape t;
  const PoseDecoderOut p = model.decode_poses(t, model.encode(t, random_stack(c, rng)));
  for (std::size_t n = 0; n < c.queries; ++n)
    for (std::size_t i = 0; i < prior.size(); ++i) EXPECT_NEAR(p.refs[0].value()(n, i), prior[i], 1e-12);
}

TEST(Model, ToWorldMatchesGeometryChain) {
  ModelConfig c = tiny_config();
  Model model(c);
  const CalibRig rig = CalibRig::desk_default();
  Rng rng(8);
  const Tensor norm = rand_tensor(rng, {5, 3}, 0.05, 0.95);
  Tape t;
  const Tensor got = model.to_world(t.constant(norm), rig).value();
  const Tensor want = transform_pose(denormalize_coords(norm, c.extents), rig.radar_to_world);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Model, SelectSubjects) {
  EXPECT_EQ(select_subjects(Tensor::vector({0.2, 0.9, 0.6, 0.4})), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(select_subjects(Tensor::vector({0.2, 0.3, 0.1})), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_subjects(Tensor::vector({0.7, 0.7})), (std::vector<std::size_t>{0, 1}));
}

TEST(Model, ExplicitSubjectsDriveJointDecoder) {
  const CalibRig rig = CalibRig::desk_default();
  Model model(tiny_config());
  model.init(4);
  Rng rng(4);
  const auto stack = random_stack(model.config(), rng);
  Tape t;
  ForwardOptions opt;
  opt.subjects = std::vector<std::size_t>{1, 0};
  const ForwardResult r = model.forward_full(t, stack, rig, opt);
  EXPECT_EQ(r.joints.subjects, (std::vector<std::size_t>{1, 0}));
  const std::size_t K = model.config().joints;
  // the joint decoder starts from the chosen pose rows
  const Tensor& p = r.pose.refs.back().value();
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(r.joints.refs[0].value()(k, a), p(1, 3 * k + a));
}

TEST(Model, EndToEndGradientsTenSeeds) {
  const CalibRig rig = CalibRig::desk_default();
  for (auto v : {AttentionVariant::pseudo3d, AttentionVariant::decoupled2d}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Model model(tiny_config(v));
      model.init(seed);
      Rng jr(derive_seed(seed, 1));
      jitter(model.params(), jr, 0.1);
      Rng rng(derive_seed(seed, 2));
      const auto stack = random_stack(model.config(), rng);
      const Tensor rp = rand_tensor(rng, {2 * 3 * 3, 1});
      const Tensor rj = rand_tensor(rng, {6, 3});
      const Tensor rc = rand_tensor(rng, {2});
      auto f = [&](Tape& t, ParamStore&) {
        ForwardOptions opt;
        opt.subjects = std::vector<std::size_t>{0, 1};
        const ForwardResult r = model.forward_full(t, stack, rig, opt);
        Var a = ops::sum(ops::mul(ops::reshape(r.pose_world.back(), Shape{18, 1}), t.constant(rp)));
        Var b = ops::sum(ops::mul(r.joint_world.back(), t.constant(rj)));
        Var c = ops::sum(ops::mul(r.pose.conf, t.constant(rc)));
        return ops::add(ops::add(a, b), c);
      };
      GradCheckOptions o;
      o.max_total = 150;
      o.seed = seed;
      const auto res = grad_check_params(f, model.params(), o);
      EXPECT_LE(res.max_rel_error, 1e-4) << to_string(v) << " seed " << seed << " worst " << res.worst;
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints

TEST(Model, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "raptr_model_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.bin").string();
  const CalibRig rig = CalibRig::desk_default();
  Model model(tiny_config());
  model.init(5);
  Rng jr(5);
  jitter(model.params(), jr, 0.1);
  model.save(path, {{"epoch", 3}});
  const Model back = Model::load(path);
  Rng rng(1);
  const auto stack = random_stack(model.config(), rng);
  Tape t1, t2;
  Model m2 = back;
  EXPECT_EQ(model.forward_full(t1, stack, rig).joint_world.back().value().values(),
            m2.forward_full(t2, stack, rig).joint_world.back().value().values());

  ModelConfig other = tiny_config();
  other.ffn = 16;
  EXPECT_THROW(Model::load(path, &other), ContractViolation);

  // tampered sidecar
  std::ifstream is(path + ".json");
  auto side = nlohmann::json::parse(is);
  is.close();
  side["config"]["d"] = 4;
  std::ofstream(path + ".json") << side.dump();
  EXPECT_THROW(Model::load(path), ContractViolation);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace raptr
