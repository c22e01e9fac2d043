// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Training loop, optimizer, evaluation and the ablation runner.

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <map>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/match_loss.hpp"
#include "raptr/metrics.hpp"
#include "raptr/model.hpp"
#include "raptr/synthdata.hpp"

namespace raptr {

// ---------------------------------------------------------------------------
// Configuration

struct OptimConfig {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip = 0.1;  // global gradient norm; 0 disables
  bool cosine = true;
  std::size_t batch = 4;
  std::size_t epochs = 20;
  std::size_t patience = 5;  // epochs without validation improvement; 0 disables

  void validate() const {
    require_config(lr > 0, "learning rate must be positive");
    require_config(weight_decay >= 0 && clip >= 0, "weight decay and clip must be non-negative");
    require_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0, "invalid moment parameters");
    require_config(batch > 0, "batch size must be positive");
  }
};

/// Loss-term presets of the ablation matrix. "K2D" covers both image-plane terms (pixel distance and OKS);
/// the classification term stays on everywhere.
inline LossWeights ablation_weights(const std::string& name, const LossWeights& base = {}) {
  LossWeights w = base;
  if (name == "full") return w;
  if (name == "k2d_only") {
    w.template_ = w.gravity = 0;
  } else if (name == "no_t3d") {
    w.template_ = 0;
  } else if (name == "no_g3d") {
    w.gravity = 0;
  } else {
    throw ConfigError("unknown ablation '" + name + "'");
  }
  return w;
}

inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> n = {"full", "k2d_only", "no_t3d", "no_g3d"};
  return n;
}

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  OptimConfig optim;
  std::uint64_t seed = 0;
  std::string ablation = "full";
  std::size_t val_stride = 5;  // frame i validates when i % stride == stride - 1; 0: no validation split
  double match_cls_weight = 1.0;
  bool template_prior = false;  // start the reference poses at the template in the room center

  LossWeights effective_weights() const { return ablation_weights(ablation, weights); }

  void validate() const {
    model.validate();
    weights.validate();
    optim.validate();
    effective_weights();
    require_config(val_stride != 1, "a validation stride of 1 leaves no training frames");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  const auto& o = c.optim;
  const auto& w = c.weights;
  return {{"model", to_json(c.model)},
          {"weights", {w.template_, w.gravity, w.kpt2d, w.oks, w.cls}},
          {"optim",
           {{"lr", o.lr},
            {"weight_decay", o.weight_decay},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"clip", o.clip},
            {"cosine", o.cosine},
            {"batch", o.batch},
            {"epochs", o.epochs},
            {"patience", o.patience}}},
          {"seed", c.seed},
          {"ablation", c.ablation},
          {"val_stride", c.val_stride},
          {"match_cls_weight", c.match_cls_weight},
          {"template_prior", c.template_prior}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  auto get = [](const nlohmann::json& src, const char* k, auto& dst) {
    if (src.contains(k)) dst = src.at(k).get<std::decay_t<decltype(dst)>>();
  };
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    require_config(w.size() == 5, "weights must list five values");
    c.weights = {w[0], w[1], w[2], w[3], w[4]};
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    get(o, "lr", c.optim.lr);
    get(o, "weight_decay", c.optim.weight_decay);
    get(o, "beta1", c.optim.beta1);
    get(o, "beta2", c.optim.beta2);
    get(o, "eps", c.optim.eps);
    get(o, "clip", c.optim.clip);
    get(o, "cosine", c.optim.cosine);
    get(o, "batch", c.optim.batch);
    get(o, "epochs", c.optim.epochs);
    get(o, "patience", c.optim.patience);
  }
  get(j, "seed", c.seed);
  get(j, "ablation", c.ablation);
  get(j, "val_stride", c.val_stride);
  get(j, "match_cls_weight", c.match_cls_weight);
  get(j, "template_prior", c.template_prior);
  c.validate();
  return c;
}

/// Small scene and network that train in minutes on one core.
inline SceneSpec desk_scene(std::uint64_t seed = 0, std::size_t frames = 64) {
  SceneSpec s;
  s.seed = seed;
  s.frames = frames;
  s.width = 16;
  s.height = 12;
  s.depth = 20;
  s.blob = 0.12;
  return s;
}

inline TrainConfig desk_config(const SceneSpec& scene) {
  TrainConfig c;
  ModelConfig& m = c.model;
  m.frames = scene.history;
  m.width = scene.width;
  m.height = scene.height;
  m.depth = scene.depth;
  m.extents = scene.room;
  m.joints = joint_count(scene.skeleton);
  m.scales = 2;
  m.d = 16;
  m.heads = 2;
  m.enc_layers = 1;
  m.pose_layers = 2;
  m.joint_layers = 2;
  m.queries = 2;
  m.enc_offsets = 2;
  m.joint_offsets = 4;
  m.ffn = 32;
  m.mask_hidden = 8;
  c.optim.lr = 2e-3;
  c.optim.batch = 4;
  c.optim.epochs = 60;
  return c;
}

// ---------------------------------------------------------------------------
// Labels and priors

inline std::vector<SubjectLabel> frame_labels(const FrameRecord& f, const Dataset& ds) {
  std::vector<SubjectLabel> out;
  for (const auto& s : f.subjects) out.push_back(make_subject_label(s.bbox, ds.templ, s.keypoints, ds.spec.rig, s.pose_world));
  return out;
}

/// Template offsets rotated into the radar frame, standing on the floor at the room center, normalized.
inline Tensor template_prior(const Dataset& ds, const SceneExtents& e) {
  const RigidTransform w2r = ds.spec.rig.radar_to_world.inverse();
  RigidTransform rot = w2r;
  rot.translation = {0, 0, 0};
  Tensor p = transform_pose(ds.templ.offsets, rot);
  double foot = 0;
  for (std::size_t k = 0; k < ds.templ.offsets.rows(); ++k) foot = std::min(foot, ds.templ.offsets(k, 1));
  const double cx = (e.lo[0] + e.hi[0]) / 2, cz = (e.lo[2] + e.hi[2]) / 2, cy = ds.spec.floor_y() - foot;
  for (std::size_t k = 0; k < p.rows(); ++k) {
    p(k, 0) += cx;
    p(k, 1) += cy;
    p(k, 2) += cz;
  }
  return normalize_coords(p, e);
}

/// Training frames and validation frames by index stride.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_frames(std::size_t n, std::size_t stride) {
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < n; ++i) (stride > 0 && i % stride == stride - 1 ? va : tr).push_back(i);
  return {tr, va};
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::size_t step = 0;
};

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
  std::string diagnostic;
};

inline double global_grad_norm(const ParamStore& store) {
  double s = 0.0;
  for (const auto& [_, e] : store.entries())
    for (double g : e.grad.values()) s += g * g;
  return std::sqrt(s);
}

/// Decoupled-weight-decay adaptive-moment update from the gradients held in `store`.
inline StepReport optimizer_step(ParamStore& store, AdamState& st, const OptimConfig& cfg, double lr) {
  StepReport r;
  r.grad_norm = global_grad_norm(store);
  if (!std::isfinite(r.grad_norm)) {
    r.diagnostic = "non-finite gradient; step skipped";
    return r;
  }
  if (cfg.clip > 0 && r.grad_norm > cfg.clip) r.clip_scale = cfg.clip / r.grad_norm;
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (auto& [name, e] : store.entries()) {
    auto [mi, fresh] = st.m.try_emplace(name, Tensor(e.value.shape()));
    Tensor& m = mi->second;
    Tensor& v = st.v.try_emplace(name, Tensor(e.value.shape())).first->second;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i] * r.clip_scale;
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      e.value[i] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * e.value[i]);
    }
  }
  r.applied = true;
  return r;
}

inline double cosine_lr(const OptimConfig& c, std::size_t step, std::size_t total) {
  if (!c.cosine || total == 0) return c.lr;
  return 0.5 * c.lr * (1.0 + std::cos(M_PI * static_cast<double>(std::min(step, total)) / static_cast<double>(total)));
}

// ---------------------------------------------------------------------------
// One frame

/// Forward, matching on the final pose layer, joint decoding of the matched queries, structural loss.
inline LossBreakdown frame_loss(Model& model, Tape& t, const FrameRecord& f, const std::vector<SubjectLabel>& labels,
                                const LossContext& ctx, Rng* rng = nullptr) {
  EncodedScene sc = model.encode(t, f.stack);
  PoseDecoderOut pose = model.decode_poses(t, sc, rng);
  std::vector<Var> pw;
  for (Var p : pose.refs) pw.push_back(model.to_world(p, ctx.rig));
  auto finite = [](const Tensor& x) {
    return std::all_of(x.values().begin(), x.values().end(), [](double v) { return std::isfinite(v); });
  };
  if (!finite(pw.back().value()) || !finite(pose.conf.value())) {
    LossBreakdown bad;
    bad.total_value = std::numeric_limits<double>::quiet_NaN();
    return bad;
  }
  const MatchResult m = match_predictions(pw.back().value(), pose.conf.value(), labels, ctx.match_cls_weight);
  std::vector<std::size_t> subjects;
  for (auto [p, _] : m.pairs) subjects.push_back(p);
  JointDecoderOut j = model.decode_joints(t, sc, pose, subjects, rng);
  std::vector<Var> jw;
  for (Var p : j.refs) jw.push_back(model.to_world(p, ctx.rig));
  return structural_loss(t, pw, jw, pose.conf_logits, m, labels, ctx);
}

/// Inference: predicted world poses of the selected subjects.
inline std::vector<Tensor> predict(Model& model, const FrameRecord& f, const CalibRig& rig) {
  Tape t;
  const ForwardResult r = model.forward_full(t, f.stack, rig);
  const Tensor& all = r.joint_world.back().value();
  const std::size_t K = model.config().joints;
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < r.joints.subjects.size(); ++s) {
    Tensor p(Shape{K, 3});
    std::copy_n(all.data() + s * K * 3, K * 3, p.data());
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline MetricReport evaluate_predictions(const Dataset& ds, const std::vector<std::size_t>& frames,
                                         const std::function<std::vector<Tensor>(const FrameRecord&)>& pred) {
  MetricReport rep;
  rep.joint_names = joint_names(ds.spec.skeleton);
  for (std::size_t i : frames) {
    const FrameRecord& f = ds.frames.at(i);
    // a non-finite prediction cannot be paired; its label counts as missed
    std::vector<Tensor> preds;
    for (auto& p : pred(f))
      if (std::all_of(p.values().begin(), p.values().end(), [](double v) { return std::isfinite(v); }))
        preds.push_back(std::move(p));
    std::vector<Tensor> truth;
    for (const auto& s : f.subjects) truth.push_back(s.pose_world);
    const EvalPairing pairing = match_for_eval(preds, truth);
    for (auto [p, l] : pairing.pairs)
      rep.add(pair_metrics(f.index, l, preds[p], truth[l], f.subjects[l].bbox));
    rep.missed += pairing.missed_labels.size();
  }
  rep.finalize();
  return rep;
}

inline MetricReport evaluate(Model& model, const Dataset& ds, const std::vector<std::size_t>& frames) {
  return evaluate_predictions(ds, frames, [&](const FrameRecord& f) { return predict(model, f, ds.spec.rig); });
}

inline MetricReport evaluate_checkpoint(const std::string& path, const Dataset& ds,
                                        const std::vector<std::size_t>& frames, const ModelConfig* expected = nullptr) {
  Model m = Model::load(path, expected);
  return evaluate(m, ds, frames);
}

/// The template placed at each label's gravity center.
inline MetricReport template_baseline(const Dataset& ds, const std::vector<std::size_t>& frames) {
  return evaluate_predictions(ds, frames, [&](const FrameRecord& f) {
    std::vector<Tensor> out;
    for (const auto& s : f.subjects) out.push_back(make_template(bbox_centroid(s.bbox), ds.templ));
    return out;
  });
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  LossTerms terms;  // mean over training frames
  double total = 0.0;
  std::optional<double> val_total;
  double lr = 0.0;
  std::size_t skipped_steps = 0;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  MetricReport final_metrics;
  double wall_seconds = 0.0;
  std::string config_hash;
  std::optional<std::size_t> best_epoch;
  bool stopped_early = false;
  bool diverged = false;
  std::vector<std::string> diagnostics;

  nlohmann::json to_json() const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
      nlohmann::json r = {{"epoch", e.epoch},         {"total", e.total},         {"template", e.terms.template_},
                          {"gravity", e.terms.gravity}, {"kpt2d", e.terms.kpt2d}, {"oks", e.terms.oks},
                          {"class", e.terms.cls},     {"lr", e.lr},               {"skipped_steps", e.skipped_steps}};
      r["val_total"] = e.val_total ? nlohmann::json(*e.val_total) : nlohmann::json(nullptr);
      ep.push_back(r);
    }
    return {{"epochs", ep},
            {"final_metrics", final_metrics.to_json()},
            {"wall_seconds", wall_seconds},
            {"config_hash", config_hash},
            {"best_epoch", best_epoch ? nlohmann::json(*best_epoch) : nlohmann::json(nullptr)},
            {"stopped_early", stopped_early},
            {"diverged", diverged},
            {"diagnostics", diagnostics}};
  }
};

struct TrainResult {
  Model model;
  RunReport report;
};

inline LossContext loss_context(const TrainConfig& cfg, const Dataset& ds) {
  LossContext ctx;
  ctx.weights = cfg.effective_weights();
  ctx.oks.sigmas = oks_sigmas(ds.spec.skeleton);
  ctx.rig = ds.spec.rig;
  ctx.match_cls_weight = cfg.match_cls_weight;
  return ctx;
}

inline Model init_model(const TrainConfig& cfg, const Dataset& ds) {
  require_config(cfg.model.joints == joint_count(ds.spec.skeleton), "model joint count differs from the dataset skeleton");
  Model model(cfg.model);
  if (cfg.template_prior) {
    const Tensor prior = template_prior(ds, cfg.model.extents);
    model.init(cfg.seed, &prior);
  } else {
    model.init(cfg.seed);
  }
  return model;
}

/// Mean structural loss over frames without touching gradients.
inline LossTerms mean_loss(Model& model, const Dataset& ds, const std::vector<std::size_t>& frames,
                           const LossContext& ctx, double* total = nullptr) {
  LossTerms acc;
  double tot = 0.0;
  for (std::size_t i : frames) {
    Tape t;
    const LossBreakdown b = frame_loss(model, t, ds.frames[i], frame_labels(ds.frames[i], ds), ctx);
    acc += b.terms;
    tot += b.total_value;
  }
  const double inv = frames.empty() ? 0.0 : 1.0 / static_cast<double>(frames.size());
  if (total) *total = tot * inv;
  return acc.scaled(inv);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res{init_model(cfg, ds), {}};
  RunReport& rep = res.report;
  rep.config_hash = config_hash(to_json(cfg));
  Model& model = res.model;
  const LossContext ctx = loss_context(cfg, ds);
  const auto [train_idx, val_idx] = split_frames(ds.frames.size(), cfg.val_stride);
  require_config(!train_idx.empty(), "no training frames");

  std::vector<std::vector<SubjectLabel>> labels;
  for (const auto& f : ds.frames) labels.push_back(frame_labels(f, ds));

  const auto& o = cfg.optim;
  const std::size_t steps_per_epoch = (train_idx.size() + o.batch - 1) / o.batch;
  const std::size_t total_steps = steps_per_epoch * o.epochs;
  AdamState adam;
  ParamStore best = model.params(), last_good = model.params();
  double best_val = INFINITY;
  std::size_t since_best = 0, step = 0;
  const bool random_mask = cfg.model.view_mask == ViewMaskMode::random;

  for (std::size_t epoch = 1; epoch <= o.epochs && !rep.diverged; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng shuffle(derive_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    Rng mask_rng(derive_seed(cfg.seed, 5000 + epoch));
    EpochRecord er;
    er.epoch = epoch;
    er.lr = cosine_lr(o, step, total_steps);
    double tot = 0.0;
    for (std::size_t b0 = 0; b0 < order.size() && !rep.diverged; b0 += o.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + o.batch);
      model.params().zero_grad();
      bool finite = true;
      for (std::size_t k = b0; k < b1; ++k) {
        Tape t;
        const LossBreakdown lb = frame_loss(model, t, ds.frames[order[k]], labels[order[k]], ctx,
                                            random_mask ? &mask_rng : nullptr);
        if (!std::isfinite(lb.total_value)) {
          finite = false;
          break;
        }
        er.terms += lb.terms;
        tot += lb.total_value;
        t.backward(lb.total);
        t.flush_param_grads();
      }
      if (!finite) {
        rep.diverged = true;
        rep.diagnostics.push_back("epoch " + std::to_string(epoch) + ": non-finite loss; restored last good parameters");
        model.params() = last_good;
        break;
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (auto& [_, e] : model.params().entries())
        for (auto& g : e.grad.values()) g *= inv;
      last_good = model.params();
      const StepReport sr = optimizer_step(model.params(), adam, o, cosine_lr(o, step, total_steps));
      ++step;
      if (!sr.applied) {
        ++er.skipped_steps;
        rep.diagnostics.push_back("epoch " + std::to_string(epoch) + ": " + sr.diagnostic);
      }
    }
    if (rep.diverged) break;
    const double inv = 1.0 / static_cast<double>(train_idx.size());
    er.terms = er.terms.scaled(inv);
    er.total = tot * inv;
    if (!val_idx.empty()) {
      double v = 0.0;
      mean_loss(model, ds, val_idx, ctx, &v);
      er.val_total = v;
      if (v < best_val) {
        best_val = v;
        best = model.params();
        rep.best_epoch = epoch;
        since_best = 0;
      } else if (o.patience > 0 && ++since_best >= o.patience) {
        rep.stopped_early = true;
      }
    }
    rep.epochs.push_back(er);
    if (on_epoch) on_epoch(er);
    if (rep.stopped_early) break;
  }
  if (rep.best_epoch) model.params() = best;
  rep.final_metrics = evaluate(model, ds, val_idx.empty() ? train_idx : val_idx);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationCell {
  std::string name;
  std::vector<double> mpjpe;  // per seed, validation frames
  double mean() const { return std::accumulate(mpjpe.begin(), mpjpe.end(), 0.0) / static_cast<double>(mpjpe.size()); }
  double stddev() const {
    const double m = mean();
    double s = 0;
    for (double v : mpjpe) s += (v - m) * (v - m);
    return mpjpe.size() > 1 ? std::sqrt(s / static_cast<double>(mpjpe.size() - 1)) : 0.0;
  }
};

/// Trains every (variant, seed) cell on a dataset generated per seed; `mutate` adapts the base config per cell.
inline std::vector<AblationCell> run_ablation(
    const TrainConfig& base, const SceneSpec& scene, const std::vector<std::string>& cells,
    const std::vector<std::uint64_t>& seeds,
    const std::function<void(TrainConfig&, const std::string&)>& mutate,
    const std::function<void(const std::string&, std::uint64_t, const RunReport&)>& on_run = {}) {
  std::vector<AblationCell> out;
  for (const auto& c : cells) out.push_back({c, {}});
  for (std::uint64_t seed : seeds) {
    SceneSpec s = scene;
    s.seed = seed;
    const Dataset ds = generate_scene(s);
    for (auto& cell : out) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      mutate(cfg, cell.name);
      const TrainResult r = train(cfg, ds);
      cell.mpjpe.push_back(r.report.final_metrics.mpjpe);
      if (on_run) on_run(cell.name, seed, r.report);
    }
  }
  return out;
}

}  // namespace raptr
