// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural radar scenes: walking stick figures rendered as Gaussian blobs
// into a horizontal (x, z) and a vertical (y, z) heatmap, plus the labels.
//
// Dataset layout on disk:
//   <dir>/index.json              spec, rig, template, per-frame labels and file names
//   <dir>/frame_NNNNN_hor.f64     [T x W x D] little-endian doubles, row-major
//   <dir>/frame_NNNNN_ver.f64     [T x H x D]

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/geometry.hpp"
#include "raptr/radar_frames.hpp"
#include "raptr/rng.hpp"
#include "raptr/skeleton.hpp"

namespace raptr {

struct SceneSpec {
  std::uint64_t seed = 0;
  SkeletonId skeleton = SkeletonId::hiber14;
  TemplateKind template_kind = TemplateKind::standing;
  std::size_t subjects = 1;
  std::size_t frames = 32;
  std::size_t history = 2;  // T
  std::size_t width = 32, height = 32, depth = 40;
  SceneExtents room;  // radar frame; also the heatmap extents
  CalibRig rig = CalibRig::desk_default();

  double noise = 0.02;  // sigma_noise
  double blob = 0.10;   // sigma_blob, meters
  double fps = 10.0;
  double speed = 0.4;            // m/s; 0 freezes the walk
  double limb_amplitude = 0.45;  // rad; 0 freezes the limbs
  double limb_frequency = 0.9;   // Hz
  double height_lo = 1.55, height_hi = 1.85;
  double heading_jitter = 0.15;  // rad around the walking direction
  double margin = 0.5;          // keep-out band along the walls
  double separation = 0.8;      // minimum start distance between subjects

  double floor_y() const { return -rig.radar_to_world.translation[1]; }

  std::array<double, 2> walk_lo() const { return {room.lo[0] + margin, room.lo[2] + margin}; }
  std::array<double, 2> walk_hi() const { return {room.hi[0] - margin, room.hi[2] - margin}; }

  /// Subjects that fit the walkable floor at one per square meter, at most two.
  std::size_t capacity() const {
    const auto lo = walk_lo(), hi = walk_hi();
    const double area = std::max(0.0, hi[0] - lo[0]) * std::max(0.0, hi[1] - lo[1]);
    return std::min<std::size_t>(2, static_cast<std::size_t>(std::floor(area)));
  }

  void validate() const {
    room.validate();
    rig.validate();
    require_config(subjects >= 1 && subjects <= 2, "subject count must be 1 or 2");
    require_config(subjects <= capacity(), "room too small for " + std::to_string(subjects) + " subject(s)");
    require_config(frames > 0 && history > 0 && width > 0 && height > 0 && depth > 0, "extents must be positive");
    require_config(blob > 0 && noise >= 0 && fps > 0 && speed >= 0 && limb_amplitude >= 0,
                   "blob width and rates must be positive");
    require_config(height_lo > 0 && height_hi >= height_lo, "subject heights must be positive");
    require_config(floor_y() - 0.05 >= room.lo[1] && floor_y() + height_hi + 0.05 <= room.hi[1],
                   "subjects do not fit between floor and room top");
  }
};

struct SubjectTruth {
  Tensor pose_world;  // [K x 3]
  BBox3D bbox;        // world
  Keypoints2D keypoints;
};

struct FrameRecord {
  std::size_t index = 0;
  RadarFrameStack stack;
  std::vector<SubjectTruth> subjects;
};

struct Dataset {
  SceneSpec spec;
  TemplateKeypoints templ;
  std::vector<FrameRecord> frames;
};

// ---------------------------------------------------------------------------
// Rendering

/// Maps a metric coordinate to a fractional pixel index of a bin grid over [lo, hi].
inline double to_pixel(double v, double lo, double hi, std::size_t n) {
  return (v - lo) / (hi - lo) * static_cast<double>(n) - 0.5;
}

namespace detail {

inline void splat(Tensor& map, std::size_t rows, std::size_t cols, double r, double c, double sr, double sc) {
  // 4 sigma support
  const long r0 = static_cast<long>(std::floor(r - 4 * sr)), r1 = static_cast<long>(std::ceil(r + 4 * sr));
  const long c0 = static_cast<long>(std::floor(c - 4 * sc)), c1 = static_cast<long>(std::ceil(c + 4 * sc));
  for (long i = std::max(0L, r0); i <= std::min<long>(static_cast<long>(rows) - 1, r1); ++i)
    for (long j = std::max(0L, c0); j <= std::min<long>(static_cast<long>(cols) - 1, c1); ++j) {
      const double dr = (static_cast<double>(i) - r) / sr, dc = (static_cast<double>(j) - c) / sc;
      map[static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(j)] += std::exp(-0.5 * (dr * dr + dc * dc));
    }
}

}  // namespace detail

/// One frame of both views from radar-frame poses: [1 x W x D] and [1 x H x D].
/// Blobs add up; Gaussian noise of `spec.noise` is added when `noise` is given; values are clipped to [0, 1].
inline RadarFrameStack render_heatmaps(const std::vector<Tensor>& poses_radar, const SceneSpec& spec,
                                       Rng* noise = nullptr) {
  const std::size_t W = spec.width, H = spec.height, D = spec.depth;
  const auto& e = spec.room;
  Tensor hor(Shape{1, W, D}), ver(Shape{1, H, D});
  const double sx = spec.blob / e.span(0) * W, sy = spec.blob / e.span(1) * H, sz = spec.blob / e.span(2) * D;
  for (const Tensor& p : poses_radar) {
    require_pose(p, "render_heatmaps");
    for (std::size_t k = 0; k < p.rows(); ++k) {
      const double c = to_pixel(p(k, 2), e.lo[2], e.hi[2], D);
      detail::splat(hor, W, D, to_pixel(p(k, 0), e.lo[0], e.hi[0], W), c, sx, sz);
      detail::splat(ver, H, D, to_pixel(p(k, 1), e.lo[1], e.hi[1], H), c, sy, sz);
    }
  }
  for (Tensor* m : {&hor, &ver})
    for (auto& v : m->values()) {
      if (noise && spec.noise > 0) v += noise->normal(0.0, spec.noise);
      v = std::clamp(v, 0.0, 1.0);
    }
  return {std::move(hor), std::move(ver)};
}

// ---------------------------------------------------------------------------
// Motion

struct SubjectTrack {
  double x0 = 0, z0 = 0;   // radar-frame floor start
  double vx = 0, vz = 0;   // m/s
  double yaw = 0;          // offset from the walking direction
  double height = 1.7;
  double phase = 0;
};

/// Folds a straight walk into [lo, hi] by mirror reflection at both walls.
inline double reflect(double v, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double u = std::fmod(v - lo, 2 * span);
  if (u < 0) u += 2 * span;
  return lo + (u <= span ? u : 2 * span - u);
}

/// +1 while the folded walk moves forward, -1 after an odd number of reflections.
inline double reflect_sign(double v, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return 1.0;
  double u = std::fmod(v - lo, 2 * span);
  if (u < 0) u += 2 * span;
  return u < span ? 1.0 : -1.0;
}

inline std::vector<SubjectTrack> sample_tracks(const SceneSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0xC0FFEE));
  const auto lo = spec.walk_lo(), hi = spec.walk_hi();
  std::vector<SubjectTrack> out;
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    SubjectTrack t;
    for (int attempt = 0;; ++attempt) {
      require_config(attempt < 1000, "could not place subjects with the requested separation");
      t.x0 = rng.uniform(lo[0], hi[0]);
      t.z0 = rng.uniform(lo[1], hi[1]);
      bool ok = true;
      for (const auto& o : out) ok = ok && std::hypot(o.x0 - t.x0, o.z0 - t.z0) >= spec.separation;
      if (ok) break;
    }
    const double dir = rng.uniform(0, 2 * M_PI);
    t.vx = spec.speed * std::cos(dir);
    t.vz = spec.speed * std::sin(dir);
    t.yaw = rng.uniform(-spec.heading_jitter, spec.heading_jitter);
    t.height = rng.uniform(spec.height_lo, spec.height_hi);
    t.phase = rng.uniform(0, 2 * M_PI);
    out.push_back(t);
  }
  return out;
}

/// World-frame joints of one subject at frame f.
inline Tensor subject_pose(const SceneSpec& spec, const SubjectTrack& t, std::size_t f) {
  const double time = static_cast<double>(f) / spec.fps;
  const auto lo = spec.walk_lo(), hi = spec.walk_hi();
  const double x = reflect(t.x0 + t.vx * time, lo[0], hi[0]);
  const double z = reflect(t.z0 + t.vz * time, lo[1], hi[1]);
  const double a = spec.limb_amplitude * std::sin(2 * M_PI * spec.limb_frequency * time + t.phase);
  // face the current walking direction (world frame)
  const double sx = reflect_sign(t.x0 + t.vx * time, lo[0], hi[0]) * t.vx;
  const double sz = reflect_sign(t.z0 + t.vz * time, lo[1], hi[1]) * t.vz;
  const auto& R = spec.rig.radar_to_world;
  const double wx = R.r(0, 0) * sx + R.r(0, 2) * sz, wz = R.r(2, 0) * sx + R.r(2, 2) * sz;
  BodyPose b;
  b.height = t.height;
  b.heading = std::atan2(-wx, -wz) + t.yaw;
  b.arm_swing_l = a;
  b.arm_swing_r = -a;
  b.leg_swing_l = -0.8 * a;
  b.leg_swing_r = 0.8 * a;
  b.knee_l = std::max(0.0, 0.8 * a);
  b.knee_r = std::max(0.0, -0.8 * a);
  Tensor p = body_joints(spec.skeleton, b);
  auto g = spec.rig.radar_to_world.apply(x, spec.floor_y(), z);
  // lowest joint on the world floor
  double foot = p(0, 1);
  for (std::size_t k = 1; k < p.rows(); ++k) foot = std::min(foot, p(k, 1));
  g[1] = -foot;
  for (std::size_t k = 0; k < p.rows(); ++k)
    for (std::size_t i = 0; i < 3; ++i) p(k, i) += g[i];
  return p;
}

// ---------------------------------------------------------------------------
// Scenes

inline SubjectTruth make_truth(const Tensor& pose_world, const CalibRig& rig) {
  return {pose_world, enclosing_bbox(pose_world).padded(0.05),
          project_to_image(transform_pose(pose_world, camera_from_world(rig)), rig.intrinsics)};
}

inline Dataset generate_scene(const SceneSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.templ = make_template_keypoints(spec.skeleton, spec.template_kind);
  const auto tracks = sample_tracks(spec);
  const RigidTransform world_to_radar = spec.rig.radar_to_world.inverse();

  std::vector<std::vector<Tensor>> poses(spec.frames);
  std::vector<RadarFrameStack> single(spec.frames);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    std::vector<Tensor> radar;
    for (const auto& t : tracks) {
      poses[f].push_back(subject_pose(spec, t, f));
      radar.push_back(transform_pose(poses[f].back(), world_to_radar));
    }
    Rng noise(derive_seed(spec.seed, f));
    single[f] = render_heatmaps(radar, spec, &noise);
  }
  const std::size_t W = spec.width, H = spec.height, D = spec.depth, T = spec.history;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    FrameRecord r;
    r.index = f;
    r.stack = {Tensor(Shape{T, W, D}), Tensor(Shape{T, H, D})};
    for (std::size_t t = 0; t < T; ++t) {
      // oldest first; the start of the sequence repeats frame 0
      const std::size_t src = f + t + 1 >= T ? f + t + 1 - T : 0;
      std::copy_n(single[src].hor.data(), W * D, r.stack.hor.data() + t * W * D);
      std::copy_n(single[src].ver.data(), H * D, r.stack.ver.data() + t * H * D);
    }
    for (const Tensor& p : poses[f]) r.subjects.push_back(make_truth(p, spec.rig));
    ds.frames.push_back(std::move(r));
  }
  return ds;
}

/// Label consistency check: stored keypoints reproject exactly and boxes contain their poses.
inline std::string audit_frame(const FrameRecord& r, const CalibRig& rig) {
  for (std::size_t s = 0; s < r.subjects.size(); ++s) {
    const auto& st = r.subjects[s];
    const Keypoints2D kp = project_to_image(transform_pose(st.pose_world, camera_from_world(rig)), rig.intrinsics);
    if (kp.valid != st.keypoints.valid || kp.uv.values() != st.keypoints.uv.values())
      return "frame " + std::to_string(r.index) + " subject " + std::to_string(s) + ": keypoints do not reproject";
    for (std::size_t k = 0; k < st.pose_world.rows(); ++k)
      if (!st.bbox.contains({st.pose_world(k, 0), st.pose_world(k, 1), st.pose_world(k, 2)}))
        return "frame " + std::to_string(r.index) + " subject " + std::to_string(s) + ": box misses a joint";
  }
  return {};
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const SceneSpec& s) {
  return {{"seed", s.seed},
          {"skeleton", to_string(s.skeleton)},
          {"template", to_string(s.template_kind)},
          {"subjects", s.subjects},
          {"frames", s.frames},
          {"history", s.history},
          {"width", s.width},
          {"height", s.height},
          {"depth", s.depth},
          {"room", to_json(s.room)},
          {"rig", to_json(s.rig)},
          {"noise", s.noise},
          {"blob", s.blob},
          {"fps", s.fps},
          {"speed", s.speed},
          {"limb_amplitude", s.limb_amplitude},
          {"limb_frequency", s.limb_frequency},
          {"height_lo", s.height_lo},
          {"height_hi", s.height_hi},
          {"heading_jitter", s.heading_jitter},
          {"margin", s.margin},
          {"separation", s.separation}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
  };
  get("seed", s.seed);
  if (j.contains("skeleton")) s.skeleton = skeleton_from_string(j.at("skeleton"));
  if (j.contains("template")) s.template_kind = template_kind_from_string(j.at("template"));
  get("subjects", s.subjects);
  get("frames", s.frames);
  get("history", s.history);
  get("width", s.width);
  get("height", s.height);
  get("depth", s.depth);
  if (j.contains("room")) s.room = extents_from_json(j.at("room"));
  if (j.contains("rig")) s.rig = calib_from_json(j.at("rig"));
  get("noise", s.noise);
  get("blob", s.blob);
  get("fps", s.fps);
  get("speed", s.speed);
  get("limb_amplitude", s.limb_amplitude);
  get("limb_frequency", s.limb_frequency);
  get("height_lo", s.height_lo);
  get("height_hi", s.height_hi);
  get("heading_jitter", s.heading_jitter);
  get("margin", s.margin);
  get("separation", s.separation);
  s.validate();
  return s;
}

namespace detail {

inline void write_f64(const std::filesystem::path& p, const Tensor& t) {
  static_assert(std::endian::native == std::endian::little, "raw heatmap files assume a little-endian host");
  std::ofstream os(p, std::ios::binary);
  require(bool(os), "cannot write " + p.string());
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_f64(const std::filesystem::path& p, Shape s) {
  Tensor t(std::move(s));
  std::ifstream is(p, std::ios::binary);
  require(bool(is), "cannot read " + p.string());
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  require(is.gcount() == static_cast<std::streamsize>(t.size() * sizeof(double)), "truncated heatmap " + p.string());
  return t;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : ds.frames) {
    std::ostringstream stem;
    stem << "frame_" << std::setw(5) << std::setfill('0') << f.index;
    detail::write_f64(dir / (stem.str() + "_hor.f64"), f.stack.hor);
    detail::write_f64(dir / (stem.str() + "_ver.f64"), f.stack.ver);
    nlohmann::json subj = nlohmann::json::array();
    for (const auto& s : f.subjects) {
      const auto& lo = s.bbox.min_corner();
      const auto& hi = s.bbox.max_corner();
      subj.push_back({{"pose_world", pose_to_json(s.pose_world)},
                      {"bbox", {lo.x, lo.y, lo.z, hi.x, hi.y, hi.z}},
                      {"keypoints", pose_to_json(s.keypoints.uv)},
                      {"valid", s.keypoints.valid}});
    }
    frames.push_back({{"index", f.index}, {"hor", stem.str() + "_hor.f64"}, {"ver", stem.str() + "_ver.f64"},
                      {"subjects", subj}});
  }
  const nlohmann::json index = {{"spec", to_json(ds.spec)}, {"template", to_json(ds.templ)}, {"frames", frames}};
  std::ofstream os(dir / "index.json");
  require(bool(os), "cannot write " + (dir / "index.json").string());
  os << index.dump(1) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.json");
  require(bool(is), "missing dataset index " + (dir / "index.json").string());
  const auto j = nlohmann::json::parse(is);
  Dataset ds;
  ds.spec = scene_spec_from_json(j.at("spec"));
  ds.templ = template_from_json(j.at("template"));
  const auto& s = ds.spec;
  for (const auto& fj : j.at("frames")) {
    FrameRecord r;
    r.index = fj.at("index");
    r.stack.hor = detail::read_f64(dir / fj.at("hor").get<std::string>(), Shape{s.history, s.width, s.depth});
    r.stack.ver = detail::read_f64(dir / fj.at("ver").get<std::string>(), Shape{s.history, s.height, s.depth});
    for (const auto& sj : fj.at("subjects")) {
      SubjectTruth st;
      st.pose_world = pose_from_json(sj.at("pose_world"));
      st.bbox = BBox3D::from_array(sj.at("bbox").get<std::array<double, 6>>());
      st.keypoints.uv = pose_from_json(sj.at("keypoints"), 2);
      st.keypoints.valid = sj.at("valid").get<std::vector<bool>>();
      st.keypoints.visibility.assign(st.keypoints.valid.size(), true);
      r.subjects.push_back(std::move(st));
    }
    ds.frames.push_back(std::move(r));
  }
  return ds;
}

}  // namespace raptr
