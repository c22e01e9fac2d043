// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "raptr/synthdata.hpp"

namespace raptr {
namespace {

SceneSpec small_spec(std::uint64_t seed = 0) {
  SceneSpec s;
  s.seed = seed;
  s.frames = 6;
  s.width = 16;
  s.height = 12;
  s.depth = 20;
  return s;
}

double mass(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s;
}

std::size_t local_maxima(const Tensor& map, std::size_t rows, std::size_t cols, double floor) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = map[i * cols + j];
      if (v < floor) continue;
      bool peak = true;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (!di && !dj) continue;
          const long a = static_cast<long>(i) + di, b = static_cast<long>(j) + dj;
          if (a < 0 || b < 0 || a >= static_cast<long>(rows) || b >= static_cast<long>(cols)) continue;
          if (map[static_cast<std::size_t>(a) * cols + static_cast<std::size_t>(b)] > v) peak = false;
        }
      n += peak;
    }
  return n;
}

TEST(SceneSpec, ValidatesAndRoundTrips) {
  SceneSpec s = small_spec(7);
  s.subjects = 2;
  s.noise = 0.05;
  const SceneSpec back = scene_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  s.subjects = 3;
  EXPECT_THROW(s.validate(), ConfigError);
  s.subjects = 2;
  s.room.lo[0] = -0.8;
  s.room.hi[0] = 0.8;  // walkable strip 0.6 m wide
  EXPECT_EQ(s.capacity(), 2u);
  s.room.lo[2] = 3.0;
  s.room.hi[2] = 4.5;  // 0.6 x 0.5 m
  EXPECT_EQ(s.capacity(), 0u);
  EXPECT_THROW(generate_scene(s), ConfigError);
  SceneSpec bad = small_spec();
  bad.blob = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Render, SingleJointAtCenterPeaksAtOne) {
  SceneSpec s = small_spec();
  s.width = 15;
  s.height = 11;
  s.depth = 21;
  s.noise = 0;
  const auto& e = s.room;
  const Tensor p = Tensor::matrix(1, 3, {(e.lo[0] + e.hi[0]) / 2, (e.lo[1] + e.hi[1]) / 2, (e.lo[2] + e.hi[2]) / 2});
  const RadarFrameStack m = render_heatmaps({p}, s);
  EXPECT_DOUBLE_EQ(m.hor[7 * 21 + 10], 1.0);
  EXPECT_DOUBLE_EQ(m.ver[5 * 21 + 10], 1.0);
  for (double v : m.hor.values()) EXPECT_LE(v, 1.0);
  EXPECT_LT(m.hor[7 * 21 + 11], 1.0);
}

TEST(Render, BlobValueMatchesGaussian) {
  SceneSpec s = small_spec();
  s.noise = 0;
  s.blob = 0.3;
  const Tensor p = Tensor::matrix(1, 3, {0.1, 0.2, 4.0});
  const RadarFrameStack m = render_heatmaps({p}, s);
  const auto& e = s.room;
  for (std::size_t i = 0; i < s.width; i += 3)
    for (std::size_t j = 0; j < s.depth; j += 4) {
      const double x = e.lo[0] + (i + 0.5) / s.width * e.span(0), z = e.lo[2] + (j + 0.5) / s.depth * e.span(2);
      const double want = std::exp(-((x - 0.1) * (x - 0.1) + (z - 4.0) * (z - 4.0)) / (2 * 0.09));
      // support is cut at 4 sigma
      if (want > 1e-3) {
        EXPECT_NEAR(m.hor[i * s.depth + j], want, 1e-12);
      }
    }
}

TEST(Render, TwoSubjectsGiveTwoPeaks) {
  SceneSpec s = small_spec();
  s.noise = 0;
  s.blob = 0.08;
  const Tensor a = Tensor::matrix(1, 3, {-1.0, 0.0, 3.0}), b = Tensor::matrix(1, 3, {1.0, 0.5, 6.0});
  const RadarFrameStack m = render_heatmaps({a, b}, s);
  EXPECT_GE(local_maxima(m.hor, s.width, s.depth, 0.2), 2u);
  EXPECT_GE(local_maxima(m.ver, s.height, s.depth, 0.2), 2u);
}

TEST(Render, MirrorInXMirrorsHorizontalOnly) {
  SceneSpec s = small_spec();
  s.noise = 0;
  Tensor p = Tensor::matrix(3, 3, {0.3, 0.1, 3.0, -0.7, -0.4, 4.2, 1.1, 0.6, 5.5});
  Tensor q = p;
  for (std::size_t k = 0; k < 3; ++k) q(k, 0) = -q(k, 0);  // room is symmetric in x
  const RadarFrameStack a = render_heatmaps({p}, s), b = render_heatmaps({q}, s);
  for (std::size_t i = 0; i < s.width; ++i)
    for (std::size_t j = 0; j < s.depth; ++j)
      EXPECT_NEAR(a.hor[i * s.depth + j], b.hor[(s.width - 1 - i) * s.depth + j], 1e-12);
  EXPECT_EQ(a.ver.values(), b.ver.values());
}

TEST(Render, TranslationInYLeavesHorizontalUnchanged) {
  SceneSpec s = small_spec();
  s.noise = 0;
  Tensor p = Tensor::matrix(2, 3, {0.3, 0.1, 3.0, -0.7, -0.4, 4.2});
  Tensor q = p;
  for (std::size_t k = 0; k < 2; ++k) q(k, 1) += 0.3;
  EXPECT_EQ(render_heatmaps({p}, s).hor.values(), render_heatmaps({q}, s).hor.values());
  EXPECT_NE(render_heatmaps({p}, s).ver.values(), render_heatmaps({q}, s).ver.values());
}

TEST(Render, MassGrowsWithSubjects) {
  SceneSpec s = small_spec();
  s.noise = 0;
  const Tensor a = Tensor::matrix(1, 3, {-1.0, 0.0, 3.0}), b = Tensor::matrix(1, 3, {1.0, 0.5, 6.0});
  const RadarFrameStack one = render_heatmaps({a}, s), two = render_heatmaps({a, b}, s);
  EXPECT_GT(mass(two.hor), mass(one.hor));
  EXPECT_GT(mass(two.ver), mass(one.ver));
  EXPECT_EQ(mass(render_heatmaps({}, s).hor), 0.0);
}

TEST(Render, NoiseIsClipped) {
  SceneSpec s = small_spec();
  s.noise = 0.5;
  Rng rng(1);
  const RadarFrameStack m = render_heatmaps({}, s, &rng);
  bool some = false;
  for (double v : m.hor.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    some = some || v > 0;
  }
  EXPECT_TRUE(some);
}

TEST(Motion, ReflectStaysInside) {
  EXPECT_DOUBLE_EQ(reflect(0.5, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(reflect(1.25, 0, 1), 0.75);
  EXPECT_DOUBLE_EQ(reflect(-0.25, 0, 1), 0.25);
  EXPECT_DOUBLE_EQ(reflect(2.25, 0, 1), 0.25);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double v = reflect(rng.uniform(-50, 50), -1.5, 2.0);
    EXPECT_GE(v, -1.5);
    EXPECT_LE(v, 2.0);
  }
}

TEST(Motion, ReflectSignIsSlopeOfFold) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const double v = rng.uniform(-20, 20), h = 1e-6;
    const double slope = (reflect(v + h, -1.5, 2.0) - reflect(v - h, -1.5, 2.0)) / (2 * h);
    // skip samples straddling a wall
    if (std::abs(std::abs(slope) - 1) > 1e-6) continue;
    EXPECT_NEAR(reflect_sign(v, -1.5, 2.0), slope, 1e-6);
  }
}

TEST(Motion, SubjectsFaceTheirWalkingDirection) {
  SceneSpec s = small_spec(7);
  s.heading_jitter = 0;
  s.frames = 200;
  const auto tracks = sample_tracks(s);
  const double step = s.speed / s.fps;
  std::size_t checked = 0;
  for (const auto& t : tracks)
    for (std::size_t f = 0; f + 1 < s.frames; ++f) {
      const Tensor a = subject_pose(s, t, f), b = subject_pose(s, t, f + 1);
      // pelvis midpoint moves with the walk; left shoulder minus right shoulder is the body's left
      const double dx = (b(8, 0) + b(11, 0) - a(8, 0) - a(11, 0)) / 2, dz = (b(8, 2) + b(11, 2) - a(8, 2) - a(11, 2)) / 2;
      if (std::abs(std::hypot(dx, dz) - step) > 1e-3 * step) continue;  // bounced off a wall
      const double lx = a(5, 0) - a(2, 0), lz = a(5, 2) - a(2, 2);
      const double fx = lz, fz = -lx;  // up x left
      EXPECT_GT((fx * dx + fz * dz) / (std::hypot(fx, fz) * std::hypot(dx, dz)), 0.999) << "frame " << f;
      ++checked;
    }
  EXPECT_GT(checked, 100u);
}

TEST(Scene, DeterministicPerSeed) {
  const Dataset a = generate_scene(small_spec(3)), b = generate_scene(small_spec(3)), c = generate_scene(small_spec(4));
  ASSERT_EQ(a.frames.size(), 6u);
  for (std::size_t f = 0; f < 6; ++f) {
    EXPECT_EQ(a.frames[f].stack.hor.values(), b.frames[f].stack.hor.values());
    EXPECT_EQ(a.frames[f].subjects[0].pose_world.values(), b.frames[f].subjects[0].pose_world.values());
  }
  EXPECT_NE(a.frames[0].stack.hor.values(), c.frames[0].stack.hor.values());
}

TEST(Scene, FrozenSceneRepeats) {
  SceneSpec s = small_spec(5);
  s.noise = 0;
  s.speed = 0;
  s.limb_amplitude = 0;
  const Dataset d = generate_scene(s);
  for (std::size_t f = 1; f < d.frames.size(); ++f) {
    EXPECT_EQ(d.frames[f].stack.hor.values(), d.frames[0].stack.hor.values());
    EXPECT_EQ(d.frames[f].stack.ver.values(), d.frames[0].stack.ver.values());
    EXPECT_EQ(d.frames[f].subjects[0].pose_world.values(), d.frames[0].subjects[0].pose_world.values());
  }
}

TEST(Scene, LabelsAreConsistent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneSpec s = small_spec(seed);
    s.subjects = 1 + seed % 2;
    const Dataset d = generate_scene(s);
    for (const auto& f : d.frames) {
      EXPECT_EQ(audit_frame(f, s.rig), "");
      ASSERT_EQ(f.subjects.size(), s.subjects);
      for (const auto& st : f.subjects) {
        EXPECT_TRUE(st.keypoints.all_valid());
        // feet on the world floor, the body inside the room
        double ymin = 1e9;
        const RigidTransform w2r = s.rig.radar_to_world.inverse();
        const Tensor radar = transform_pose(st.pose_world, w2r);
        for (std::size_t k = 0; k < radar.rows(); ++k) {
          ymin = std::min(ymin, st.pose_world(k, 1));
          for (std::size_t a = 0; a < 3; ++a) {
            EXPECT_GT(radar(k, a), s.room.lo[a]);
            EXPECT_LT(radar(k, a), s.room.hi[a]);
          }
        }
        EXPECT_EQ(ymin, 0.0);
      }
    }
  }
}

TEST(Scene, AuditCatchesTamperedKeypoints) {
  Dataset d = generate_scene(small_spec(1));
  d.frames[2].subjects[0].keypoints.uv(3, 1) += 1e-9;
  EXPECT_NE(audit_frame(d.frames[2], d.spec.rig), "");
}

TEST(Scene, HistoryStackUsesPreviousFrames) {
  SceneSpec s = small_spec(6);
  s.history = 3;
  const Dataset d = generate_scene(s);
  const std::size_t n = s.width * s.depth;
  auto slice = [&](const FrameRecord& r, std::size_t t) {
    return std::vector<double>(r.stack.hor.data() + t * n, r.stack.hor.data() + (t + 1) * n);
  };
  // newest last; frame 0 is repeated at the start
  EXPECT_EQ(slice(d.frames[0], 0), slice(d.frames[0], 2));
  EXPECT_EQ(slice(d.frames[1], 1), slice(d.frames[0], 2));
  EXPECT_EQ(slice(d.frames[4], 0), slice(d.frames[2], 2));
  EXPECT_EQ(slice(d.frames[4], 1), slice(d.frames[3], 2));
}

TEST(Scene, TwoSubjectsStartApart) {
  SceneSpec s = small_spec(8);
  s.subjects = 2;
  const auto tracks = sample_tracks(s);
  ASSERT_EQ(tracks.size(), 2u);
  EXPECT_GE(std::hypot(tracks[0].x0 - tracks[1].x0, tracks[0].z0 - tracks[1].z0), s.separation);
}

TEST(Dataset, DiskRoundTrip) {
  SceneSpec s = small_spec(9);
  s.subjects = 2;
  const Dataset d = generate_scene(s);
  const auto dir = std::filesystem::temp_directory_path() / "raptr_synth_rt";
  std::filesystem::remove_all(dir);
  save_dataset(d, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "index.json"));
  EXPECT_EQ(std::filesystem::file_size(dir / "frame_00003_hor.f64"), s.history * s.width * s.depth * 8);
  const Dataset back = load_dataset(dir);
  ASSERT_EQ(back.frames.size(), d.frames.size());
  EXPECT_EQ(to_json(back.spec), to_json(d.spec));
  EXPECT_EQ(back.templ.offsets.values(), d.templ.offsets.values());
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    EXPECT_EQ(back.frames[f].stack.hor.values(), d.frames[f].stack.hor.values());
    EXPECT_EQ(back.frames[f].stack.ver.values(), d.frames[f].stack.ver.values());
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(back.frames[f].subjects[j].pose_world.values(), d.frames[f].subjects[j].pose_world.values());
      EXPECT_EQ(back.frames[f].subjects[j].keypoints.uv.values(), d.frames[f].subjects[j].keypoints.uv.values());
    }
    EXPECT_EQ(audit_frame(back.frames[f], back.spec.rig), "");
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace raptr
