// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Skeleton definitions, a parametric stick-figure body and template poses.
//
// Body frame: x lateral, y up, z depth; a subject with heading 0 faces -z.
// Lengths are for a 1.7 m subject and scale linearly with height.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/geometry.hpp"

namespace raptr {

enum class SkeletonId { hiber14, mmvr17 };

inline std::string to_string(SkeletonId s) { return s == SkeletonId::hiber14 ? "hiber14" : "mmvr17"; }
inline SkeletonId skeleton_from_string(const std::string& s) {
  if (s == "hiber14") return SkeletonId::hiber14;
  if (s == "mmvr17") return SkeletonId::mmvr17;
  throw ConfigError("unknown skeleton '" + s + "'");
}

inline std::size_t joint_count(SkeletonId s) { return s == SkeletonId::hiber14 ? 14 : 17; }

inline const std::vector<std::string>& joint_names(SkeletonId s) {
  static const std::vector<std::string> hiber = {"head",       "neck",      "r_shoulder", "r_elbow", "r_wrist",
                                                 "l_shoulder", "l_elbow",   "l_wrist",    "r_hip",   "r_knee",
                                                 "r_ankle",    "l_hip",     "l_knee",     "l_ankle"};
  static const std::vector<std::string> coco = {"nose",       "l_eye",      "r_eye",   "l_ear",   "r_ear",
                                                "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
                                                "r_wrist",    "l_hip",      "r_hip",   "l_knee",  "r_knee",
                                                "l_ankle",    "r_ankle"};
  return s == SkeletonId::hiber14 ? hiber : coco;
}

/// Per-joint OKS constants: COCO values for mmvr17, uniform 0.08 for hiber14.
inline std::vector<double> oks_sigmas(SkeletonId s) {
  if (s == SkeletonId::mmvr17)
    return {.026, .025, .025, .035, .035, .079, .079, .072, .072, .062, .062, .107, .107, .087, .087, .089, .089};
  return std::vector<double>(14, 0.08);
}

/// Limb articulation of the stick figure (radians).
struct BodyPose {
  double height = 1.7;
  double heading = 0.0;        // rotation about +y
  double arm_swing_l = 0.0;    // sagittal, positive = forward
  double arm_swing_r = 0.0;
  double arm_abduct_l = 0.15;  // frontal, positive = away from the body
  double arm_abduct_r = 0.15;
  double elbow_l = 0.1, elbow_r = 0.1;  // forearm flexion
  double leg_swing_l = 0.0, leg_swing_r = 0.0;
  double knee_l = 0.0, knee_r = 0.0;    // shin flexion (backwards)
  double torso_lean = 0.0;              // forward lean of the trunk
  double pelvis_height = -1.0;          // < 0: standing default from height
};

namespace detail {

struct Vec3 {
  double x, y, z;
  Vec3 operator+(Vec3 o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

// Direction of a limb hanging down, swung forward (towards -z) by `swing` and
// abducted sideways by `abduct` towards `side` (+1 or -1 in x).
inline Vec3 limb_dir(double swing, double abduct, double side) {
  return {side * std::sin(abduct), -std::cos(abduct) * std::cos(swing), -std::cos(abduct) * std::sin(swing)};
}

}  // namespace detail

/// Joints of the stick figure with the pelvis center at the origin-level floor
/// point (feet near y = 0), before heading rotation and translation.
inline Tensor body_joints(SkeletonId skel, const BodyPose& b) {
  using detail::Vec3;
  const double s = b.height / 1.7;
  const double thigh = 0.42 * s, shin = 0.41 * s, upper = 0.30 * s, fore = 0.27 * s;
  const double hip_w = 0.10 * s, sho_w = 0.19 * s;
  const double pelvis_y = b.pelvis_height > 0 ? b.pelvis_height : 0.88 * s;
  const double trunk = 0.50 * s, neck_len = 0.06 * s, head_len = 0.13 * s;

  const Vec3 pelvis{0, pelvis_y, 0};
  const Vec3 up{0, std::cos(b.torso_lean), -std::sin(b.torso_lean)};
  const Vec3 sho_c = pelvis + up * trunk;
  const Vec3 neck = sho_c + up * neck_len;
  const Vec3 head = neck + up * head_len;

  auto arm = [&](double side, double swing, double abduct, double elbow) {
    const Vec3 sh = sho_c + Vec3{side * sho_w, 0, 0};
    const Vec3 el = sh + detail::limb_dir(swing, abduct, side) * upper;
    const Vec3 wr = el + detail::limb_dir(swing + elbow, abduct, side) * fore;
    return std::array<Vec3, 3>{sh, el, wr};
  };
  auto leg = [&](double side, double swing, double knee) {
    const Vec3 hp = pelvis + Vec3{side * hip_w, 0, 0};
    const Vec3 kn = hp + detail::limb_dir(swing, 0.0, side) * thigh;
    const Vec3 an = kn + detail::limb_dir(swing - knee, 0.0, side) * shin;
    return std::array<Vec3, 3>{hp, kn, an};
  };
  // Subject's right is -x when facing -z.
  const auto ra = arm(-1, b.arm_swing_r, b.arm_abduct_r, b.elbow_r);
  const auto la = arm(+1, b.arm_swing_l, b.arm_abduct_l, b.elbow_l);
  const auto rl = leg(-1, b.leg_swing_r, b.knee_r);
  const auto ll = leg(+1, b.leg_swing_l, b.knee_l);

  std::vector<Vec3> j;
  if (skel == SkeletonId::hiber14) {
    j = {head, neck, ra[0], ra[1], ra[2], la[0], la[1], la[2], rl[0], rl[1], rl[2], ll[0], ll[1], ll[2]};
  } else {
    const Vec3 fwd{0, 0, -1};
    const Vec3 nose = head + fwd * (0.09 * s);
    const Vec3 eye_c = head + up * (0.03 * s) + fwd * (0.07 * s);
    const Vec3 l_eye = eye_c + Vec3{0.03 * s, 0, 0}, r_eye = eye_c + Vec3{-0.03 * s, 0, 0};
    const Vec3 l_ear = head + Vec3{0.075 * s, 0, 0}, r_ear = head + Vec3{-0.075 * s, 0, 0};
    j = {nose,  l_eye, r_eye, l_ear, r_ear, la[0], ra[0], la[1], ra[1],
         la[2], ra[2], ll[0], rl[0], ll[1], rl[1], ll[2], rl[2]};
  }
  Tensor out(Shape{j.size(), 3});
  const double c = std::cos(b.heading), sn = std::sin(b.heading);
  for (std::size_t i = 0; i < j.size(); ++i) {
    out(i, 0) = c * j[i].x + sn * j[i].z;
    out(i, 1) = j[i].y;
    out(i, 2) = -sn * j[i].x + c * j[i].z;
  }
  return out;
}

/// Origin-centered template offsets (K_world).
struct TemplateKeypoints {
  Tensor offsets;  // [K x 3] meters, column means 0
  SkeletonId skeleton = SkeletonId::hiber14;

  void validate() const {
    require(offsets.ndim() == 2 && offsets.cols() == 3, "TemplateKeypoints: offsets must be [K x 3]");
    require(offsets.rows() == joint_count(skeleton), "TemplateKeypoints: joint count does not match skeleton");
    for (std::size_t a = 0; a < 3; ++a) {
      double m = 0.0;
      for (std::size_t i = 0; i < offsets.rows(); ++i) m += offsets(i, a);
      require(std::abs(m / static_cast<double>(offsets.rows())) <= 1e-9, "TemplateKeypoints: not origin-centered");
    }
  }
};

inline Tensor center_rows(Tensor p) {
  const Point3D c = pose_centroid(p);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    p(i, 0) -= c.x;
    p(i, 1) -= c.y;
    p(i, 2) -= c.z;
  }
  return p;
}

enum class TemplateKind { standing, sitting, standing_half, sitting_half };

inline std::string to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::standing: return "standing";
    case TemplateKind::sitting: return "sitting";
    case TemplateKind::standing_half: return "standing_half";
    case TemplateKind::sitting_half: return "sitting_half";
  }
  return "?";
}

inline TemplateKind template_kind_from_string(const std::string& s) {
  for (auto k : {TemplateKind::standing, TemplateKind::sitting, TemplateKind::standing_half,
                 TemplateKind::sitting_half})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown template '" + s + "'");
}

/// Fixed template: a 1.7 m standing figure, a 1.6 m seated figure, or either scaled by 0.5.
inline TemplateKeypoints make_template_keypoints(SkeletonId skel, TemplateKind kind = TemplateKind::standing) {
  BodyPose b;
  const bool sitting = kind == TemplateKind::sitting || kind == TemplateKind::sitting_half;
  if (sitting) {
    b.height = 1.6;
    b.leg_swing_l = b.leg_swing_r = M_PI / 2;
    b.knee_l = b.knee_r = M_PI / 2;
    b.arm_swing_l = b.arm_swing_r = 0.3;
    b.elbow_l = b.elbow_r = 0.9;
    b.pelvis_height = 0.45;
  }
  Tensor p = center_rows(body_joints(skel, b));
  if (kind == TemplateKind::standing_half || kind == TemplateKind::sitting_half)
    for (auto& v : p.values()) v *= 0.5;
  TemplateKeypoints t{center_rows(std::move(p)), skel};
  t.validate();
  return t;
}

/// T = K + 1 g^T
inline Tensor make_template(const Point3D& g, const TemplateKeypoints& k) {
  require(g.frame == Frame::world, "make_template: gravity center must be in the world frame");
  require(g.is_finite(), "make_template: non-finite gravity center");
  Tensor t = k.offsets;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    t(i, 0) += g.x;
    t(i, 1) += g.y;
    t(i, 2) += g.z;
  }
  return t;
}

inline nlohmann::json to_json(const TemplateKeypoints& k) {
  return {{"skeleton", to_string(k.skeleton)}, {"offsets", pose_to_json(k.offsets)}};
}

inline TemplateKeypoints template_from_json(const nlohmann::json& j) {
  TemplateKeypoints k{pose_from_json(j.at("offsets")), skeleton_from_string(j.at("skeleton"))};
  k.validate();
  return k;
}

}  // namespace raptr
