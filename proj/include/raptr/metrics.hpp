// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Pose-error metrics in centimeters. Axes (h, v, d) are world (x, y, z).

#pragma once

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/geometry.hpp"
#include "raptr/hungarian.hpp"

namespace raptr {

inline constexpr double kCmPerMeter = 100.0;

namespace detail {
inline void require_pair(const Tensor& a, const Tensor& b, const char* who) {
  require_pose(a, who);
  require_pose(b, who);
  require(a.rows() == b.rows(), std::string(who) + ": joint count mismatch");
}
}  // namespace detail

inline std::vector<double> mpjpe_per_joint(const Tensor& pred, const Tensor& label) {
  detail::require_pair(pred, label, "mpjpe");
  std::vector<double> out(pred.rows());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = std::hypot(pred(k, 0) - label(k, 0), pred(k, 1) - label(k, 1), pred(k, 2) - label(k, 2)) * kCmPerMeter;
  return out;
}

inline double mpjpe(const Tensor& pred, const Tensor& label) {
  const auto e = mpjpe_per_joint(pred, label);
  double s = 0.0;
  for (double v : e) s += v;
  return s / static_cast<double>(e.size());
}

/// Mean absolute deviation along each axis.
inline std::array<double, 3> mpjpe_per_axis(const Tensor& pred, const Tensor& label) {
  detail::require_pair(pred, label, "mpjpe_per_axis");
  std::array<double, 3> out{};
  for (std::size_t k = 0; k < pred.rows(); ++k)
    for (std::size_t a = 0; a < 3; ++a) out[a] += std::abs(pred(k, a) - label(k, a));
  for (auto& v : out) v *= kCmPerMeter / static_cast<double>(pred.rows());
  return out;
}

struct BBoxMetrics {
  double center_cm = 0.0;
  std::array<double, 3> edge_cm{};
};

/// Center distance (midpoints) and per-axis absolute edge-length error between two boxes.
inline BBoxMetrics bbox_metrics(const BBox3D& pred, const BBox3D& label) {
  const Point3D a = bbox_centroid(pred), b = bbox_centroid(label);
  BBoxMetrics m;
  m.center_cm = distance(a, b) * kCmPerMeter;
  const auto ea = pred.extent(), eb = label.extent();
  for (std::size_t i = 0; i < 3; ++i) m.edge_cm[i] = std::abs(ea[i] - eb[i]) * kCmPerMeter;
  return m;
}

inline BBoxMetrics bbox_metrics(const Tensor& pred_pose, const BBox3D& label) {
  return bbox_metrics(enclosing_bbox(pred_pose), label);
}

struct EvalPairing {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, label)
  std::vector<std::size_t> missed_labels;
};

/// Minimum total centroid distance assignment; labels left over are misses.
inline EvalPairing match_for_eval(const std::vector<Tensor>& preds, const std::vector<Tensor>& labels) {
  EvalPairing out;
  if (preds.empty() || labels.empty()) {
    for (std::size_t j = 0; j < labels.size(); ++j) out.missed_labels.push_back(j);
    return out;
  }
  Tensor cost(Shape{preds.size(), labels.size()});
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      cost(i, j) = distance(pose_centroid(preds[i]), pose_centroid(labels[j]));
  const MatchResult m = hungarian(cost);
  out.pairs = m.pairs;
  std::vector<char> hit(labels.size(), 0);
  for (const auto& [_, j] : m.pairs) hit[j] = 1;
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (!hit[j]) out.missed_labels.push_back(j);
  return out;
}

/// One matched (prediction, label) pair.
struct PairMetrics {
  std::size_t frame = 0, label = 0;
  double mpjpe = 0.0;
  std::array<double, 3> axis{};
  std::vector<double> per_joint;
  BBoxMetrics bbox;
};

inline PairMetrics pair_metrics(std::size_t frame, std::size_t label, const Tensor& pred, const Tensor& truth,
                                const BBox3D& truth_box) {
  PairMetrics p;
  p.frame = frame;
  p.label = label;
  p.per_joint = mpjpe_per_joint(pred, truth);
  p.mpjpe = mpjpe(pred, truth);
  p.axis = mpjpe_per_axis(pred, truth);
  p.bbox = bbox_metrics(pred, truth_box);
  return p;
}

/// Aggregate over matched pairs; every number is a plain mean over pairs.
struct MetricReport {
  std::vector<std::string> joint_names;
  std::vector<PairMetrics> pairs;
  std::size_t missed = 0;

  double mpjpe = 0.0;
  std::array<double, 3> axis{};
  std::vector<double> per_joint;
  double bbox_center = 0.0;
  std::array<double, 3> bbox_edge{};

  void add(PairMetrics p) { pairs.push_back(std::move(p)); }

  void finalize() {
    mpjpe = bbox_center = 0.0;
    axis = bbox_edge = {};
    per_joint.assign(joint_names.size(), 0.0);
    if (pairs.empty()) return;
    const double inv = 1.0 / static_cast<double>(pairs.size());
    for (const auto& p : pairs) {
      require(p.per_joint.size() == per_joint.size(), "MetricReport: joint count differs from the joint names");
      mpjpe += p.mpjpe * inv;
      bbox_center += p.bbox.center_cm * inv;
      for (std::size_t a = 0; a < 3; ++a) {
        axis[a] += p.axis[a] * inv;
        bbox_edge[a] += p.bbox.edge_cm[a] * inv;
      }
      for (std::size_t k = 0; k < per_joint.size(); ++k) per_joint[k] += p.per_joint[k] * inv;
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json pj = nlohmann::json::object();
    for (std::size_t k = 0; k < per_joint.size(); ++k) pj[joint_names[k]] = per_joint[k];
    return {{"mpjpe_cm", mpjpe},
            {"mpjpe_axis_cm", {{"h", axis[0]}, {"v", axis[1]}, {"d", axis[2]}}},
            {"per_joint_cm", pj},
            {"bbox_center_cm", bbox_center},
            {"bbox_edge_cm", {{"h", bbox_edge[0]}, {"v", bbox_edge[1]}, {"d", bbox_edge[2]}}},
            {"pairs", pairs.size()},
            {"missed", missed}};
  }

  /// One row per matched pair.
  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "frame,label,mpjpe_cm,h_cm,v_cm,d_cm,bbox_center_cm,bbox_edge_h_cm,bbox_edge_v_cm,bbox_edge_d_cm";
    for (const auto& n : joint_names) os << ',' << n;
    os << '\n';
    for (const auto& p : pairs) {
      os << p.frame << ',' << p.label << ',' << p.mpjpe << ',' << p.axis[0] << ',' << p.axis[1] << ',' << p.axis[2]
         << ',' << p.bbox.center_cm << ',' << p.bbox.edge_cm[0] << ',' << p.bbox.edge_cm[1] << ','
         << p.bbox.edge_cm[2];
      for (double v : p.per_joint) os << ',' << v;
      os << '\n';
    }
    return os.str();
  }

  /// Aggregate table: one column per joint, then Overall, (h), (v), (d).
  std::string table() const {
    std::ostringstream head, row;
    head << std::left;
    row << std::fixed << std::setprecision(2);
    for (std::size_t k = 0; k < joint_names.size(); ++k) {
      const int w = std::max<int>(7, static_cast<int>(joint_names[k].size()) + 1);
      head << std::setw(w) << joint_names[k];
      row << std::setw(w) << std::left << per_joint[k];
    }
    head << std::setw(9) << "Overall" << std::setw(8) << "(h)" << std::setw(8) << "(v)" << "(d)";
    row << std::setw(9) << mpjpe << std::setw(8) << axis[0] << std::setw(8) << axis[1] << axis[2];
    return head.str() + "\n" + row.str() + "\n";
  }
};

}  // namespace raptr
