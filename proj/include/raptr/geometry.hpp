// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Coordinate frames, rigid maps, pinhole projection and pose helpers.
// Poses are [K x 3] tensors in meters; the frame is tracked by the caller.

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/ops.hpp"
#include "raptr/tensor.hpp"

namespace raptr {

enum class Frame { radar, world, camera };

inline const char* frame_name(Frame f) {
  switch (f) {
    case Frame::radar: return "radar";
    case Frame::world: return "world";
    case Frame::camera: return "camera";
  }
  return "?";
}

struct Point3D {
  double x = 0.0, y = 0.0, z = 0.0;
  Frame frame = Frame::world;

  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  bool is_finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
  friend bool operator==(const Point3D&, const Point3D&) = default;
};

inline double distance(const Point3D& a, const Point3D& b) {
  return std::hypot(a.x - b.x, a.y - b.y, a.z - b.z);
}

/// Axis-aligned box; min_corner <= max_corner componentwise.
class BBox3D {
 public:
  BBox3D() = default;
  BBox3D(Point3D lo, Point3D hi) : lo_(lo), hi_(hi) {
    require(lo.is_finite() && hi.is_finite(), "BBox3D: non-finite corner");
    require(lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z, "BBox3D: min corner exceeds max corner");
    require(lo.frame == hi.frame, "BBox3D: corners in different frames");
  }
  static BBox3D from_array(const std::array<double, 6>& v, Frame f = Frame::world) {
    return BBox3D({v[0], v[1], v[2], f}, {v[3], v[4], v[5], f});
  }

  const Point3D& min_corner() const { return lo_; }
  const Point3D& max_corner() const { return hi_; }
  std::array<double, 3> extent() const { return {hi_.x - lo_.x, hi_.y - lo_.y, hi_.z - lo_.z}; }

  bool contains(const Point3D& p, double tol = 0.0) const {
    return p.x >= lo_.x - tol && p.y >= lo_.y - tol && p.z >= lo_.z - tol && p.x <= hi_.x + tol &&
           p.y <= hi_.y + tol && p.z <= hi_.z + tol;
  }
  BBox3D padded(double m) const {
    return BBox3D({lo_.x - m, lo_.y - m, lo_.z - m, lo_.frame}, {hi_.x + m, hi_.y + m, hi_.z + m, hi_.frame});
  }

 private:
  Point3D lo_, hi_;
};

inline Point3D bbox_centroid(const BBox3D& b) {
  const auto& lo = b.min_corner();
  const auto& hi = b.max_corner();
  return {(lo.x + hi.x) / 2, (lo.y + hi.y) / 2, (lo.z + hi.z) / 2, lo.frame};
}

inline void require_pose(const Tensor& p, const char* who) {
  require(p.cols() == 3 && p.rows() * 3 == p.size(), std::string(who) + ": expected a [K x 3] pose, got " +
                                                          shape_str(p.shape()));
}

inline Point3D pose_centroid(const Tensor& pose, Frame f = Frame::world) {
  require_pose(pose, "pose_centroid");
  const std::size_t k = pose.rows();
  if (k == 0) throw std::domain_error("pose_centroid: pose has no joints");
  double s[3] = {0, 0, 0};
  for (std::size_t i = 0; i < k; ++i)
    for (int a = 0; a < 3; ++a) s[a] += pose(i, a);
  const double n = static_cast<double>(k);
  return {s[0] / n, s[1] / n, s[2] / n, f};
}

inline BBox3D enclosing_bbox(const Tensor& pose, Frame f = Frame::world) {
  require_pose(pose, "enclosing_bbox");
  require(pose.rows() >= 1, "enclosing_bbox: pose has no joints");
  double lo[3] = {pose(0, 0), pose(0, 1), pose(0, 2)}, hi[3] = {lo[0], lo[1], lo[2]};
  for (std::size_t i = 1; i < pose.rows(); ++i)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], pose(i, a));
      hi[a] = std::max(hi[a], pose(i, a));
    }
  return BBox3D({lo[0], lo[1], lo[2], f}, {hi[0], hi[1], hi[2], f});
}

// ---------------------------------------------------------------------------
// Rigid maps q = R p + t

struct RigidTransform {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{0, 0, 0};

  static RigidTransform identity() { return {}; }
  static RigidTransform translate(double x, double y, double z) { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}, {x, y, z}}; }
  // Rotation about an axis by `angle` radians (Rodrigues).
  static RigidTransform axis_angle(std::array<double, 3> axis, double angle, std::array<double, 3> t = {0, 0, 0}) {
    const double n = std::hypot(axis[0], axis[1], axis[2]);
    const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
    const double c = std::cos(angle), s = std::sin(angle), C = 1 - c;
    return {{c + x * x * C, x * y * C - z * s, x * z * C + y * s, y * x * C + z * s, c + y * y * C,
             y * z * C - x * s, z * x * C - y * s, z * y * C + x * s, c + z * z * C},
            t};
  }

  double r(int i, int j) const { return rotation[static_cast<std::size_t>(i * 3 + j)]; }

  std::array<double, 3> apply(double x, double y, double z) const {
    return {r(0, 0) * x + r(0, 1) * y + r(0, 2) * z + translation[0],
            r(1, 0) * x + r(1, 1) * y + r(1, 2) * z + translation[1],
            r(2, 0) * x + r(2, 1) * y + r(2, 2) * z + translation[2]};
  }

  RigidTransform inverse() const {
    RigidTransform inv;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) inv.rotation[static_cast<std::size_t>(i * 3 + j)] = r(j, i);
    for (int i = 0; i < 3; ++i)
      inv.translation[static_cast<std::size_t>(i)] =
          -(inv.r(i, 0) * translation[0] + inv.r(i, 1) * translation[1] + inv.r(i, 2) * translation[2]);
    return inv;
  }

  // this after other: x -> this(other(x))
  RigidTransform compose(const RigidTransform& o) const {
    RigidTransform out;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += r(i, k) * o.r(k, j);
        out.rotation[static_cast<std::size_t>(i * 3 + j)] = s;
      }
    out.translation = apply(o.translation[0], o.translation[1], o.translation[2]);
    return out;
  }

  double determinant() const {
    return r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1)) - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0)) +
           r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
  }

  bool is_proper_rotation(double tol = 1e-9) const {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += r(k, i) * r(k, j);
        if (std::abs(s - (i == j ? 1.0 : 0.0)) > tol) return false;
      }
    return std::abs(determinant() - 1.0) <= tol;
  }

  // R^T as a [3 x 3] tensor, so rows of a pose map as pose * R^T.
  Tensor rotation_transposed() const {
    Tensor t(Shape{3, 3});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) t(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = r(i, j);
    return t;
  }
};

inline Tensor transform_pose(const Tensor& pose, const RigidTransform& m) {
  require_pose(pose, "transform_pose");
  require(m.is_proper_rotation(), "transform_pose: rotation block is not orthonormal with det +1");
  Tensor out(pose.shape());
  for (std::size_t i = 0; i < pose.rows(); ++i) {
    const auto q = m.apply(pose(i, 0), pose(i, 1), pose(i, 2));
    for (int a = 0; a < 3; ++a) out(i, static_cast<std::size_t>(a)) = q[static_cast<std::size_t>(a)];
  }
  return out;
}

inline Point3D transform_point(const Point3D& p, const RigidTransform& m, Frame to) {
  const auto q = m.apply(p.x, p.y, p.z);
  return {q[0], q[1], q[2], to};
}

// ---------------------------------------------------------------------------
// Pinhole camera

struct Intrinsics {
  double fx = 500.0, fy = 500.0, cx = 320.0, cy = 240.0;
  double width = 640.0, height = 480.0;
  double z_min = 0.05;

  double diagonal() const { return std::hypot(width, height); }
};

struct Keypoints2D {
  Tensor uv;                    // [K x 2] pixels
  std::vector<bool> visibility;  // all visible unless stated otherwise
  std::vector<bool> valid;       // false where the joint was at or behind z_min

  std::size_t size() const { return uv.rows(); }
  bool all_valid() const { return std::all_of(valid.begin(), valid.end(), [](bool b) { return b; }); }
};

inline Keypoints2D project_to_image(const Tensor& p_camera, const Intrinsics& in) {
  require_pose(p_camera, "project_to_image");
  const std::size_t k = p_camera.rows();
  Keypoints2D kp{Tensor(Shape{k, 2}), std::vector<bool>(k, true), std::vector<bool>(k, true)};
  for (std::size_t i = 0; i < k; ++i) {
    const double x = p_camera(i, 0), y = p_camera(i, 1), z = p_camera(i, 2);
    if (!(z > in.z_min)) {
      kp.valid[i] = false;
      continue;
    }
    kp.uv(i, 0) = in.fx * x / z + in.cx;
    kp.uv(i, 1) = in.fy * y / z + in.cy;
  }
  return kp;
}

struct CalibRig {
  RigidTransform radar_to_world;
  RigidTransform radar_to_camera;
  Intrinsics intrinsics;

  void validate() const {
    require(radar_to_world.is_proper_rotation(), "CalibRig: radar_to_world rotation is not a proper rotation");
    require(radar_to_camera.is_proper_rotation(), "CalibRig: radar_to_camera rotation is not a proper rotation");
    require(intrinsics.fx > 0 && intrinsics.fy > 0, "CalibRig: focal lengths must be positive");
  }

  // Radar at 1 m height looking along +z; camera 0.2 m above and 0.3 m behind it,
  // image axes (right, down) = (-x, -y) of the radar frame.
  static CalibRig desk_default() {
    CalibRig rig;
    rig.radar_to_world = RigidTransform::axis_angle({0, 1, 0}, 10.0 * M_PI / 180.0, {3.0, 1.0, 0.5});
    rig.radar_to_camera = {{-1, 0, 0, 0, -1, 0, 0, 0, 1}, {0.0, 0.2, 0.3}};
    return rig;
  }
};

/// World -> camera map of a rig.
inline RigidTransform camera_from_world(const CalibRig& rig) {
  return rig.radar_to_camera.compose(rig.radar_to_world.inverse());
}

// ---------------------------------------------------------------------------
// Scene normalization: per-axis (v - lo) / (hi - lo), clamped to [eps, 1 - eps].

struct SceneExtents {
  std::array<double, 3> lo{-2.0, -1.1, 1.5};
  std::array<double, 3> hi{2.0, 1.1, 7.0};

  void validate() const {
    for (std::size_t a = 0; a < 3; ++a) require(hi[a] > lo[a], "SceneExtents: extents must be positive");
  }
  double span(std::size_t a) const { return hi[a] - lo[a]; }
};

inline constexpr double kNormalizeEps = 1e-4;

inline Tensor normalize_coords(const Tensor& pose, const SceneExtents& e, double eps = kNormalizeEps) {
  require_pose(pose, "normalize_coords");
  e.validate();
  Tensor out(pose.shape());
  for (std::size_t i = 0; i < pose.rows(); ++i)
    for (std::size_t a = 0; a < 3; ++a)
      out(i, a) = std::clamp((pose(i, a) - e.lo[a]) / e.span(a), eps, 1.0 - eps);
  return out;
}

inline Tensor denormalize_coords(const Tensor& pose_norm, const SceneExtents& e) {
  require_pose(pose_norm, "denormalize_coords");
  e.validate();
  Tensor out(pose_norm.shape());
  for (std::size_t i = 0; i < pose_norm.rows(); ++i)
    for (std::size_t a = 0; a < 3; ++a) out(i, a) = e.lo[a] + pose_norm(i, a) * e.span(a);
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable counterparts on a Tape; inputs are [n x 3] row-stacked points.

namespace ops {

inline Var transform_rows(Var x, const RigidTransform& m) {
  Tape& t = *x.tape;
  Var rt = t.constant(m.rotation_transposed());
  Var tr = t.constant(Tensor::vector({m.translation[0], m.translation[1], m.translation[2]}));
  return add_bias(matmul(reshape(x, Shape{x.value().size() / 3, 3}), rt), tr);
}

inline Var denormalize_rows(Var x, const SceneExtents& e) {
  Tape& t = *x.tape;
  Tensor w(Shape{3, 3});
  for (std::size_t a = 0; a < 3; ++a) w(a, a) = e.span(a);
  Var b = t.constant(Tensor::vector({e.lo[0], e.lo[1], e.lo[2]}));
  return add_bias(matmul(reshape(x, Shape{x.value().size() / 3, 3}), t.constant(w)), b);
}

// Pinhole projection of camera-frame rows -> [n x 2]; rows with z <= z_min give (0,0)
// with zero gradient and are reported through `valid`.
inline Var project_rows(Var cam, const Intrinsics& in, std::vector<bool>* valid = nullptr) {
  const Tensor& c = cam.value();
  const std::size_t n = c.size() / 3;
  Tensor out(Shape{n, 2});
  std::vector<bool> ok(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = c[3 * i], y = c[3 * i + 1], z = c[3 * i + 2];
    if (!(z > in.z_min)) {
      ok[i] = false;
      continue;
    }
    out(i, 0) = in.fx * x / z + in.cx;
    out(i, 1) = in.fy * y / z + in.cy;
  }
  if (valid) *valid = ok;
  const std::size_t ic = cam.id;
  return cam.tape->record(std::move(out), {cam}, [ic, in, ok](Tape& t, std::size_t self) {
    if (!t.requires_grad(ic)) return;
    const Tensor& c = t.value(ic);
    const Tensor& g = t.grad(self);
    Tensor& gc = t.grad(ic);
    for (std::size_t i = 0; i < ok.size(); ++i) {
      if (!ok[i]) continue;
      const double x = c[3 * i], y = c[3 * i + 1], z = c[3 * i + 2];
      gc[3 * i] += g[2 * i] * in.fx / z;
      gc[3 * i + 1] += g[2 * i + 1] * in.fy / z;
      gc[3 * i + 2] += -g[2 * i] * in.fx * x / (z * z) - g[2 * i + 1] * in.fy * y / (z * z);
    }
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const RigidTransform& m) {
  return {{"rotation", m.rotation}, {"translation", m.translation}};
}

inline RigidTransform rigid_from_json(const nlohmann::json& j) {
  RigidTransform m;
  m.rotation = j.at("rotation").get<std::array<double, 9>>();
  m.translation = j.at("translation").get<std::array<double, 3>>();
  return m;
}

inline nlohmann::json to_json(const CalibRig& rig) {
  const auto& in = rig.intrinsics;
  return {{"radar_to_world", to_json(rig.radar_to_world)},
          {"radar_to_camera", to_json(rig.radar_to_camera)},
          {"intrinsics",
           {{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx}, {"cy", in.cy}, {"width", in.width}, {"height", in.height},
            {"z_min", in.z_min}}}};
}

inline CalibRig calib_from_json(const nlohmann::json& j) {
  CalibRig rig;
  rig.radar_to_world = rigid_from_json(j.at("radar_to_world"));
  rig.radar_to_camera = rigid_from_json(j.at("radar_to_camera"));
  const auto& in = j.at("intrinsics");
  rig.intrinsics.fx = in.at("fx");
  rig.intrinsics.fy = in.at("fy");
  rig.intrinsics.cx = in.at("cx");
  rig.intrinsics.cy = in.at("cy");
  rig.intrinsics.width = in.value("width", 640.0);
  rig.intrinsics.height = in.value("height", 480.0);
  rig.intrinsics.z_min = in.value("z_min", 0.05);
  rig.validate();
  return rig;
}

inline nlohmann::json to_json(const SceneExtents& e) { return {{"lo", e.lo}, {"hi", e.hi}}; }
inline SceneExtents extents_from_json(const nlohmann::json& j) {
  SceneExtents e{j.at("lo").get<std::array<double, 3>>(), j.at("hi").get<std::array<double, 3>>()};
  e.validate();
  return e;
}

inline nlohmann::json pose_to_json(const Tensor& pose) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < pose.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (std::size_t a = 0; a < pose.cols(); ++a) r.push_back(pose(i, a));
    rows.push_back(r);
  }
  return rows;
}

inline Tensor pose_from_json(const nlohmann::json& j, std::size_t cols = 3) {
  Tensor p(Shape{j.size(), cols});
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].size() == cols, "pose_from_json: row width mismatch");
    for (std::size_t a = 0; a < cols; ++a) p(i, a) = j[i][a].get<double>();
  }
  return p;
}

}  // namespace raptr
