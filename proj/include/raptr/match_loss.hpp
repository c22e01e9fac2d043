// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Prediction-to-label matching and the structural loss.
//
//   total = (1/N') sum_matched (l1 T3D + l2 G3D + l3 K2D + l4 OKS) + l5 focal
//
// T3D is applied to every pose-decoder layer, G3D/K2D/OKS to every
// joint-decoder layer; per-layer values are averaged.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/geometry.hpp"
#include "raptr/hungarian.hpp"
#include "raptr/ops.hpp"
#include "raptr/skeleton.hpp"

namespace raptr {

struct LossWeights {
  double template_ = 1.0, gravity = 1.0, kpt2d = 5.0, oks = 1.0, cls = 1.0;

  void validate() const {
    require_config(template_ >= 0 && gravity >= 0 && kpt2d >= 0 && oks >= 0 && cls >= 0,
                   "loss weights must be non-negative");
  }
};

struct LossTerms {
  double template_ = 0.0, gravity = 0.0, kpt2d = 0.0, oks = 0.0, cls = 0.0;

  double weighted(const LossWeights& w) const {
    return w.template_ * template_ + w.gravity * gravity + w.kpt2d * kpt2d + w.oks * oks + w.cls * cls;
  }
  LossTerms& operator+=(const LossTerms& o) {
    template_ += o.template_;
    gravity += o.gravity;
    kpt2d += o.kpt2d;
    oks += o.oks;
    cls += o.cls;
    return *this;
  }
  LossTerms scaled(double s) const { return {template_ * s, gravity * s, kpt2d * s, oks * s, cls * s}; }
};

struct OksConfig {
  std::vector<double> sigmas;  // psi_k
  bool normalize_by_k = true;

  void validate(std::size_t k) const {
    require(sigmas.size() == k, "OksConfig: one constant per joint is required");
    for (double s : sigmas) require(s > 0, "OksConfig: constants must be positive");
  }
};

inline constexpr double kOksFloor = 1e-8;
inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

/// Everything the loss needs about one labelled subject.
struct SubjectLabel {
  BBox3D bbox;            // world
  Point3D gravity;        // bbox centroid
  Tensor template_world;  // [K x 3]
  Keypoints2D keypoints;  // image
  double oks_scale = 1.0;
  Tensor pose_world;  // [K x 3] full 3D truth; evaluation only
};

/// Square root of the image area of the label box's projected corners.
inline double oks_scale(const BBox3D& b, const CalibRig& rig) {
  const RigidTransform cw = camera_from_world(rig);
  Tensor corners(Shape{8, 3});
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& lo = b.min_corner();
    const auto& hi = b.max_corner();
    const auto c = cw.apply(i & 1 ? hi.x : lo.x, i & 2 ? hi.y : lo.y, i & 4 ? hi.z : lo.z);
    for (std::size_t a = 0; a < 3; ++a) corners(i, a) = c[a];
  }
  const Keypoints2D kp = project_to_image(corners, rig.intrinsics);
  require(kp.all_valid(), "oks_scale: label box is behind the camera");
  double u0 = INFINITY, u1 = -INFINITY, v0 = INFINITY, v1 = -INFINITY;
  for (std::size_t i = 0; i < 8; ++i) {
    u0 = std::min(u0, kp.uv(i, 0));
    u1 = std::max(u1, kp.uv(i, 0));
    v0 = std::min(v0, kp.uv(i, 1));
    v1 = std::max(v1, kp.uv(i, 1));
  }
  return std::sqrt((u1 - u0) * (v1 - v0));
}

inline SubjectLabel make_subject_label(const BBox3D& bbox, const TemplateKeypoints& templ, const Keypoints2D& kp,
                                       const CalibRig& rig, Tensor pose_world = {}) {
  SubjectLabel s;
  s.bbox = bbox;
  s.gravity = bbox_centroid(bbox);
  s.template_world = make_template(s.gravity, templ);
  s.keypoints = kp;
  s.oks_scale = oks_scale(bbox, rig);
  s.pose_world = std::move(pose_world);
  return s;
}

// ---------------------------------------------------------------------------
// Matching

/// cost(i, j) = mean joint distance between prediction i ([K x 3] block of `pred`) and label j + w_cls (1 - c_i).
inline Tensor matching_cost(const Tensor& pred, const Tensor& conf, const std::vector<Tensor>& labels,
                            double w_cls = 1.0) {
  const std::size_t n = conf.size();
  require(n > 0 && pred.size() % (3 * n) == 0, "matching_cost: prediction rows must split into N poses");
  const std::size_t K = pred.size() / (3 * n);
  Tensor c(Shape{n, labels.size()});
  for (std::size_t j = 0; j < labels.size(); ++j) {
    require(labels[j].size() == 3 * K, "matching_cost: label joint count differs from predictions");
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double* p = pred.data() + (i * K + k) * 3;
        const double* l = labels[j].data() + k * 3;
        s += std::hypot(p[0] - l[0], p[1] - l[1], p[2] - l[2]);
      }
      c(i, j) = s / static_cast<double>(K) + w_cls * (1.0 - conf[i]);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Differentiable terms

namespace ops {

/// Mean Euclidean distance of pred rows [K x 3] to the template.
inline Var t3d_loss(Var pred, const Tensor& templ) {
  require(pred.value().size() == templ.size(), "t3d_loss: joint count mismatch");
  Var d = sub(reshape(pred, templ.shape()), pred.tape->constant(templ));
  return mean(norm_rows(d));
}

/// Distance between the centroid of pred rows and g.
inline Var g3d_loss(Var pred, const Point3D& g) {
  Var c = mean_rows(reshape(pred, Shape{pred.value().size() / 3, 3}));
  return sum(norm_rows(sub(c, pred.tape->constant(Tensor::matrix(1, 3, {g.x, g.y, g.z})))));
}

namespace detail {

inline std::vector<double> joint_mask(const Keypoints2D& label, const std::vector<bool>& pred_valid) {
  std::vector<double> m(label.size(), 1.0);
  for (std::size_t k = 0; k < m.size(); ++k) {
    const bool vis = label.visibility.empty() || label.visibility[k];
    const bool lv = label.valid.empty() || label.valid[k];
    const bool pv = pred_valid.empty() || pred_valid[k];
    m[k] = vis && lv && pv ? 1.0 : 0.0;
  }
  return m;
}

}  // namespace detail

/// Mean pixel distance over usable joints divided by the image diagonal.
/// Joints invalid in the label or the prediction (behind the camera) are excluded.
inline Var k2d_loss(Var uv, const Keypoints2D& label, const std::vector<bool>& pred_valid, double diagonal,
                    std::size_t* excluded = nullptr) {
  require(uv.value().size() == label.uv.size(), "k2d_loss: joint count mismatch");
  Tape& t = *uv.tape;
  const auto m = detail::joint_mask(label, pred_valid);
  double used = 0.0;
  for (double v : m) used += v;
  if (excluded) *excluded = m.size() - static_cast<std::size_t>(used);
  Tensor w(Shape{m.size()});
  for (std::size_t k = 0; k < m.size(); ++k) w[k] = used > 0 ? m[k] / (used * diagonal) : 0.0;
  Var d = norm_rows(sub(reshape(uv, label.uv.shape()), t.constant(label.uv)));
  return sum(mul(d, t.constant(w)));
}

/// -log(OKS + 1e-8), OKS = (1/K) sum_k exp(-d_k^2 / (2 s^2 psi_k^2)) over usable joints.
inline Var oks_loss(Var uv, const Keypoints2D& label, const OksConfig& cfg, double s,
                    const std::vector<bool>& pred_valid = {}) {
  const std::size_t K = label.size();
  cfg.validate(K);
  require(s > 0, "oks_loss: scale must be positive");
  Tape& t = *uv.tape;
  const auto m = detail::joint_mask(label, pred_valid);
  double used = 0.0;
  for (double v : m) used += v;
  Tensor coef(Shape{K, 1}), w(Shape{K, 1});
  for (std::size_t k = 0; k < K; ++k) {
    coef[k] = -1.0 / (2.0 * s * s * cfg.sigmas[k] * cfg.sigmas[k]);
    w[k] = cfg.normalize_by_k ? (used > 0 ? m[k] / used : 0.0) : m[k];
  }
  Var d2 = matmul(square(sub(reshape(uv, label.uv.shape()), t.constant(label.uv))),
                  t.constant(Tensor(Shape{2, 1}, 1.0)));
  Var oks = sum(mul(exp(mul(d2, t.constant(coef))), t.constant(w)));
  return neg(log(add_scalar(oks, kOksFloor)));
}

/// Mean sigmoid focal loss over queries, from logits; targets 1 for matched queries.
inline Var focal_loss(Var logits, const std::vector<bool>& targets, double alpha = kFocalAlpha,
                      double gamma = kFocalGamma) {
  const Tensor& z = logits.value();
  require(z.size() == targets.size(), "focal_loss: one target per query");
  const std::size_t n = z.size();
  auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  double total = 0.0;
  Tensor dz(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double p = kernels::sigmoid(z[i]);
    const double logp = -softplus(-z[i]), log1mp = -softplus(z[i]);
    if (targets[i]) {
      const double q = 1.0 - p;
      total += -alpha * std::pow(q, gamma) * logp;
      dz[i] = alpha * (gamma * p * std::pow(q, gamma) * logp - std::pow(q, gamma + 1.0));
    } else {
      total += -(1.0 - alpha) * std::pow(p, gamma) * log1mp;
      dz[i] = -(1.0 - alpha) * (gamma * std::pow(p, gamma) * (1.0 - p) * log1mp - std::pow(p, gamma + 1.0));
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : dz.values()) v *= inv;
  const std::size_t il = logits.id;
  return logits.tape->record(Tensor::scalar(total * inv), {logits},
                             [il, dz = std::move(dz)](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0];
                               Tensor d = dz;
                               for (auto& v : d.values()) v *= g;
                               t.accumulate(il, d);
                             });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Plain-value forms

inline double t3d_loss(const Tensor& pred, const Tensor& templ) {
  Tape t;
  return ops::t3d_loss(t.constant(pred), templ).value()[0];
}
inline double g3d_loss(const Tensor& pred, const Point3D& g) {
  Tape t;
  return ops::g3d_loss(t.constant(pred), g).value()[0];
}
inline double k2d_loss(const Tensor& uv, const Keypoints2D& label, double diagonal,
                       const std::vector<bool>& pred_valid = {}) {
  Tape t;
  return ops::k2d_loss(t.constant(uv), label, pred_valid, diagonal).value()[0];
}
inline double oks_loss(const Tensor& uv, const Keypoints2D& label, const OksConfig& cfg, double s) {
  Tape t;
  return ops::oks_loss(t.constant(uv), label, cfg, s).value()[0];
}
/// Focal loss on probabilities in (0, 1).
inline double focal_cls_loss(const Tensor& conf, const std::vector<bool>& targets) {
  Tensor z(conf.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    require(conf[i] > 0 && conf[i] < 1, "focal_cls_loss: confidences must lie in (0, 1)");
    z[i] = std::log(conf[i] / (1.0 - conf[i]));
  }
  Tape t;
  return ops::focal_loss(t.constant(z), targets).value()[0];
}

// ---------------------------------------------------------------------------
// Structural loss

struct LossContext {
  LossWeights weights;
  OksConfig oks;
  CalibRig rig;
  double match_cls_weight = 1.0;
};

struct LossBreakdown {
  Var total;
  LossTerms terms;  // unweighted
  double total_value = 0.0;
  std::size_t n_matched = 0;
  std::size_t excluded_joints = 0;
};

inline nlohmann::json to_json(const LossBreakdown& b, std::size_t step) {
  return {{"step", step},           {"total", b.total_value},       {"template", b.terms.template_},
          {"gravity", b.terms.gravity}, {"kpt2d", b.terms.kpt2d},   {"oks", b.terms.oks},
          {"class", b.terms.cls},   {"n_matched", b.n_matched}};
}

/// Matches the final pose-decoder layer (world frame) against label templates.
inline MatchResult match_predictions(const Tensor& pose_world, const Tensor& conf,
                                     const std::vector<SubjectLabel>& labels, double w_cls = 1.0) {
  std::vector<Tensor> t;
  for (const auto& l : labels) t.push_back(l.template_world);
  if (t.empty()) {
    MatchResult r;
    for (std::size_t i = 0; i < conf.size(); ++i) r.unmatched.push_back(i);
    return r;
  }
  return hungarian(matching_cost(pose_world, conf, t, w_cls));
}

/// pose_world: per pose layer [N K x 3]; joint_world: per joint layer [N' K x 3] with row block s
/// belonging to match.pairs[s]; conf_logits [N].
inline LossBreakdown structural_loss(Tape& t, const std::vector<Var>& pose_world,
                                     const std::vector<Var>& joint_world, Var conf_logits, const MatchResult& match,
                                     const std::vector<SubjectLabel>& labels, const LossContext& ctx) {
  ctx.weights.validate();
  const auto& w = ctx.weights;
  LossBreakdown out;
  out.n_matched = match.pairs.size();
  const std::size_t N = conf_logits.value().size();
  std::vector<Var> parts;
  auto push = [&](Var v, double weight) {
    if (weight != 0.0) parts.push_back(ops::scale(v, weight));
  };
  auto layers_of = [](const std::vector<Var>& all) {
    // deep supervision over refined layers; the initialization counts only when there is none
    if (all.size() <= 1) return all;
    return std::vector<Var>(all.begin() + 1, all.end());
  };
  if (!match.pairs.empty()) {
    const double inv_n = 1.0 / static_cast<double>(match.pairs.size());
    const std::size_t K = labels.at(match.pairs[0].second).template_world.rows();
    if (w.template_ != 0.0 && !pose_world.empty()) {
      const auto layers = layers_of(pose_world);
      std::vector<Var> acc;
      for (Var p : layers)
        for (const auto& [pi, li] : match.pairs)
          acc.push_back(ops::t3d_loss(ops::slice_rows(p, pi * K, (pi + 1) * K), labels[li].template_world));
      Var v = ops::scale(ops::sum(ops::concat_rows(acc)), inv_n / static_cast<double>(layers.size()));
      out.terms.template_ = v.value()[0];
      push(v, w.template_);
    }
    if (!joint_world.empty() && (w.gravity != 0.0 || w.kpt2d != 0.0 || w.oks != 0.0)) {
      const auto layers = layers_of(joint_world);
      const RigidTransform cw = camera_from_world(ctx.rig);
      const double inv_l = inv_n / static_cast<double>(layers.size());
      std::vector<Var> g, k, o;
      for (Var p : layers)
        for (std::size_t s = 0; s < match.pairs.size(); ++s) {
          const SubjectLabel& lab = labels[match.pairs[s].second];
          Var pose = ops::slice_rows(p, s * K, (s + 1) * K);
          if (w.gravity != 0.0) g.push_back(ops::g3d_loss(pose, lab.gravity));
          if (w.kpt2d != 0.0 || w.oks != 0.0) {
            std::vector<bool> valid;
            Var uv = ops::project_rows(ops::transform_rows(pose, cw), ctx.rig.intrinsics, &valid);
            std::size_t excl = 0;
            if (w.kpt2d != 0.0) k.push_back(ops::k2d_loss(uv, lab.keypoints, valid, ctx.rig.intrinsics.diagonal(), &excl));
            if (w.oks != 0.0) o.push_back(ops::oks_loss(uv, lab.keypoints, ctx.oks, lab.oks_scale, valid));
            out.excluded_joints += excl;
          }
        }
      auto reduce = [&](std::vector<Var>& v, double& term, double weight) {
        if (v.empty()) return;
        Var r = ops::scale(ops::sum(ops::concat_rows(v)), inv_l);
        term = r.value()[0];
        push(r, weight);
      };
      reduce(g, out.terms.gravity, w.gravity);
      reduce(k, out.terms.kpt2d, w.kpt2d);
      reduce(o, out.terms.oks, w.oks);
    }
  }
  if (w.cls != 0.0) {
    std::vector<bool> target(N, false);
    for (const auto& [pi, _] : match.pairs) target[pi] = true;
    Var c = ops::focal_loss(conf_logits, target);
    out.terms.cls = c.value()[0];
    push(c, w.cls);
  }
  out.total = parts.empty() ? t.constant(Tensor::scalar(0.0)) : ops::sum(ops::concat_rows(parts));
  out.total_value = out.total.value()[0];
  return out;
}

}  // namespace raptr
