// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "raptr/grad_check.hpp"
#include "raptr/skeleton.hpp"
#include "test_util.hpp"

namespace raptr {
namespace {

using testing::rand_tensor;

Tensor random_pose(Rng& rng, std::size_t k = 14) { return rand_tensor(rng, {k, 3}, -3, 3); }

RigidTransform random_rigid(Rng& rng) {
  return RigidTransform::axis_angle({rng.normal(), rng.normal(), rng.normal()}, rng.uniform(-M_PI, M_PI),
                                    {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)});
}

// ---- boxes and centroids --------------------------------------------------

TEST(BBoxCentroid, SymmetricBox) {
  const auto c = bbox_centroid(BBox3D::from_array({0, 0, 0, 2, 2, 2}));
  EXPECT_EQ(c.x, 1.0);
  EXPECT_EQ(c.y, 1.0);
  EXPECT_EQ(c.z, 1.0);
}

TEST(BBoxCentroid, DegenerateBoxIsItsCorner) {
  const Point3D p{0.3, -1.2, 4.5};
  const auto c = bbox_centroid(BBox3D(p, p));
  EXPECT_EQ(c, p);
}

TEST(BBoxCentroid, MidpointNotHalfExtent) {
  const auto c = bbox_centroid(BBox3D::from_array({-1, -2, -3, 3, 2, 1}));
  EXPECT_EQ(c.x, 1.0);
  EXPECT_EQ(c.y, 0.0);
  EXPECT_EQ(c.z, -1.0);
}

TEST(BBox, RejectsInvertedCorners) {
  EXPECT_THROW(BBox3D::from_array({1, 0, 0, 0, 1, 1}), ContractViolation);
}

TEST(PoseCentroid, ConstantAndPair) {
  Tensor p(Shape{5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    p(i, 0) = 1;
    p(i, 1) = 2;
    p(i, 2) = 3;
  }
  const auto c = pose_centroid(p);
  EXPECT_EQ(c.x, 1.0);
  EXPECT_EQ(c.y, 2.0);
  EXPECT_EQ(c.z, 3.0);
  const auto c2 = pose_centroid(Tensor::matrix(2, 3, {0, 0, 0, 2, 0, 0}));
  EXPECT_EQ(c2.x, 1.0);
  EXPECT_EQ(c2.y, 0.0);
}

TEST(PoseCentroid, MatchesExtendedPrecisionSum) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Tensor p = random_pose(rng);
    long double s[3] = {0, 0, 0};
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t a = 0; a < 3; ++a) s[a] += p(i, a);
    const auto c = pose_centroid(p);
    EXPECT_NEAR(c.x, static_cast<double>(s[0] / 14), 1e-14);
    EXPECT_NEAR(c.y, static_cast<double>(s[1] / 14), 1e-14);
    EXPECT_NEAR(c.z, static_cast<double>(s[2] / 14), 1e-14);
  }
}

TEST(PoseCentroid, EmptyPoseIsDomainError) {
  EXPECT_THROW(pose_centroid(Tensor(Shape{0, 3})), std::domain_error);
}

TEST(EnclosingBBox, SingleJointAndPair) {
  const auto b = enclosing_bbox(Tensor::matrix(1, 3, {1, 2, 3}));
  EXPECT_EQ(b.min_corner(), b.max_corner());
  const auto b2 = enclosing_bbox(Tensor::matrix(2, 3, {0, 0, 0, 1, 2, 3}));
  EXPECT_EQ(b2.min_corner(), (Point3D{0, 0, 0}));
  EXPECT_EQ(b2.max_corner(), (Point3D{1, 2, 3}));
}

TEST(EnclosingBBox, MatchesIndependentScanAndContainsPose) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Tensor p = random_pose(rng);
    double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1e9, -1e9, -1e9};
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t a = 0; a < 3; ++a) {
        if (p(i, a) < lo[a]) lo[a] = p(i, a);
        if (p(i, a) > hi[a]) hi[a] = p(i, a);
      }
    const auto b = enclosing_bbox(p);
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_EQ(b.min_corner()[a], lo[a]);
      EXPECT_EQ(b.max_corner()[a], hi[a]);
    }
    for (std::size_t i = 0; i < 14; ++i) EXPECT_TRUE(b.contains({p(i, 0), p(i, 1), p(i, 2)}));
    const auto c = bbox_centroid(b);
    EXPECT_EQ(c.x, (lo[0] + hi[0]) / 2);
  }
}

// ---- templates ------------------------------------------------------------

TEST(Template, ZeroOffsetsGiveGravityCenter) {
  TemplateKeypoints k{Tensor(Shape{14, 3}), SkeletonId::hiber14};
  const Tensor t = make_template({1, 1, 1}, k);
  for (double v : t.values()) EXPECT_EQ(v, 1.0);
}

TEST(Template, OriginGravityLeavesOffsets) {
  const auto k = make_template_keypoints(SkeletonId::hiber14);
  EXPECT_EQ(make_template({0, 0, 0}, k), k.offsets);
}

TEST(Template, RowwiseTranslation) {
  const auto k = make_template_keypoints(SkeletonId::hiber14);
  const Tensor t = make_template({2, 0, 1}, k);
  for (std::size_t i = 0; i < 14; ++i) {
    EXPECT_EQ(t(i, 0), k.offsets(i, 0) + 2.0);
    EXPECT_EQ(t(i, 1), k.offsets(i, 1));
    EXPECT_EQ(t(i, 2), k.offsets(i, 2) + 1.0);
  }
}

TEST(Template, AllVariantsAreCenteredWithExpectedJointCount) {
  for (auto s : {SkeletonId::hiber14, SkeletonId::mmvr17})
    for (auto kind : {TemplateKind::standing, TemplateKind::sitting, TemplateKind::standing_half,
                      TemplateKind::sitting_half}) {
      const auto k = make_template_keypoints(s, kind);
      EXPECT_EQ(k.offsets.rows(), joint_count(s));
      const auto c = pose_centroid(k.offsets);
      EXPECT_NEAR(c.x, 0.0, 1e-12);
      EXPECT_NEAR(c.y, 0.0, 1e-12);
      EXPECT_NEAR(c.z, 0.0, 1e-12);
    }
}

TEST(Template, StandingFigureIsAboutOnePointSevenMetersTall) {
  const auto k = make_template_keypoints(SkeletonId::hiber14);
  const auto b = enclosing_bbox(k.offsets);
  const double h = b.max_corner().y - b.min_corner().y;
  EXPECT_GT(h, 1.4);
  EXPECT_LT(h, 1.7);
  const auto half = make_template_keypoints(SkeletonId::hiber14, TemplateKind::standing_half);
  EXPECT_NEAR(enclosing_bbox(half.offsets).extent()[1], h / 2, 1e-12);
}

TEST(Template, MakeThenCentroidReturnsGravity) {
  Rng rng(3);
  const auto k = make_template_keypoints(SkeletonId::mmvr17);
  for (int t = 0; t < 100; ++t) {
    const Point3D g{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const auto c = pose_centroid(make_template(g, k));
    EXPECT_NEAR(c.x, g.x, 1e-9);
    EXPECT_NEAR(c.y, g.y, 1e-9);
    EXPECT_NEAR(c.z, g.z, 1e-9);
  }
}

TEST(Template, RequiresWorldFrame) {
  const auto k = make_template_keypoints(SkeletonId::hiber14);
  EXPECT_THROW(make_template({0, 0, 0, Frame::radar}, k), ContractViolation);
}

// ---- rigid transforms -----------------------------------------------------

TEST(TransformPose, IdentityAndTranslation) {
  Rng rng(4);
  const Tensor p = random_pose(rng);
  EXPECT_EQ(transform_pose(p, RigidTransform::identity()), p);
  const Tensor o = transform_pose(Tensor(Shape{1, 3}), RigidTransform::translate(1, 2, 3));
  EXPECT_EQ(o, Tensor::matrix(1, 3, {1, 2, 3}));
}

TEST(TransformPose, QuarterTurnAboutZ) {
  const Tensor o = transform_pose(Tensor::matrix(1, 3, {1, 0, 0}), RigidTransform::axis_angle({0, 0, 1}, M_PI / 2));
  EXPECT_NEAR(o[0], 0.0, 1e-15);
  EXPECT_NEAR(o[1], 1.0, 1e-15);
  EXPECT_NEAR(o[2], 0.0, 1e-15);
}

TEST(TransformPose, InverseRoundTripAndDistancePreservation) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto m = random_rigid(rng);
    ASSERT_TRUE(m.is_proper_rotation());
    const Tensor p = random_pose(rng);
    const Tensor q = transform_pose(p, m);
    EXPECT_LE(max_abs_diff(transform_pose(q, m.inverse()), p), 1e-9);
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t j = i + 1; j < 14; ++j) {
        const double d0 = std::hypot(p(i, 0) - p(j, 0), p(i, 1) - p(j, 1), p(i, 2) - p(j, 2));
        const double d1 = std::hypot(q(i, 0) - q(j, 0), q(i, 1) - q(j, 1), q(i, 2) - q(j, 2));
        EXPECT_NEAR(d0, d1, 1e-9);
      }
  }
}

TEST(TransformPose, RejectsReflection) {
  RigidTransform m;
  m.rotation = {-1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_THROW(transform_pose(Tensor(Shape{1, 3}), m), ContractViolation);
}

// ---- projection -----------------------------------------------------------

TEST(Projection, OpticalAxisHitsPrincipalPoint) {
  const Intrinsics in;
  for (double z : {0.5, 1.0, 7.0}) {
    const auto kp = project_to_image(Tensor::matrix(1, 3, {0, 0, z}), in);
    EXPECT_EQ(kp.uv(0, 0), in.cx);
    EXPECT_EQ(kp.uv(0, 1), in.cy);
  }
}

TEST(Projection, HandEvaluatedPinhole) {
  Intrinsics in{100, 100, 64, 64};
  const auto kp = project_to_image(Tensor::matrix(1, 3, {0.5, 0.25, 2}), in);
  EXPECT_DOUBLE_EQ(kp.uv(0, 0), 89.0);
  EXPECT_DOUBLE_EQ(kp.uv(0, 1), 76.5);
  EXPECT_TRUE(kp.valid[0]);
  EXPECT_TRUE(kp.visibility[0]);
}

TEST(Projection, RayInvariance) {
  Rng rng(6);
  const Intrinsics in;
  for (int t = 0; t < 200; ++t) {
    Tensor p = rand_tensor(rng, {14, 3}, -2, 2);
    for (std::size_t i = 0; i < 14; ++i) p(i, 2) = rng.uniform(0.5, 8);
    const double k = rng.uniform(0.1, 10);
    Tensor q = p;
    for (auto& v : q.values()) v *= k;
    const auto a = project_to_image(p, in), b = project_to_image(q, in);
    for (std::size_t i = 0; i < a.uv.size(); ++i)
      EXPECT_LE(std::abs(a.uv[i] - b.uv[i]), 1e-9 * std::max(1.0, std::abs(a.uv[i])));
  }
}

TEST(Projection, BehindCameraIsFlagged) {
  const auto kp = project_to_image(Tensor::matrix(3, 3, {0, 0, 1, 0, 0, 0.05, 0, 0, -2}), Intrinsics{});
  EXPECT_TRUE(kp.valid[0]);
  EXPECT_FALSE(kp.valid[1]);
  EXPECT_FALSE(kp.valid[2]);
  EXPECT_FALSE(kp.all_valid());
}

TEST(Projection, DifferentiableFormMatchesAndPassesGradCheck) {
  Rng rng(7);
  const Intrinsics in;
  for (int seed = 0; seed < 10; ++seed) {
    Tensor p = rand_tensor(rng, {5, 3}, -1, 1);
    for (std::size_t i = 0; i < 5; ++i) p(i, 2) = rng.uniform(1, 4);
    Tape t;
    const Tensor uv = ops::project_rows(t.constant(p), in).value();
    EXPECT_LE(max_abs_diff(uv, project_to_image(p, in).uv), 1e-12);
    const auto r = grad_check(
        [&](Tape& tp, const std::vector<Var>& v) {
          return ops::sum(ops::scale(ops::square(ops::project_rows(v[0], in)), 1e-4));
        },
        {p});
    EXPECT_LE(r.max_rel_error, 1e-5);
  }
}

TEST(TransformRows, MatchesPlainTransformAndGradCheck) {
  Rng rng(8);
  const auto m = random_rigid(rng);
  const Tensor p = random_pose(rng, 4);
  Tape t;
  EXPECT_LE(max_abs_diff(ops::transform_rows(t.constant(p), m).value(), transform_pose(p, m)), 1e-12);
  const auto r = grad_check(
      [&](Tape&, const std::vector<Var>& v) { return ops::sum(ops::square(ops::transform_rows(v[0], m))); }, {p});
  EXPECT_LE(r.max_rel_error, 1e-6);
}

// ---- normalization --------------------------------------------------------

TEST(Normalize, CenterAndMinCorner) {
  const SceneExtents e;
  Tensor c(Shape{1, 3});
  for (std::size_t a = 0; a < 3; ++a) c[a] = (e.lo[a] + e.hi[a]) / 2;
  const Tensor n = normalize_coords(c, e);
  for (double v : n.values()) EXPECT_NEAR(v, 0.5, 1e-15);
  const Tensor lo = normalize_coords(Tensor::matrix(1, 3, {e.lo[0], e.lo[1], e.lo[2]}), e);
  for (double v : lo.values()) EXPECT_EQ(v, kNormalizeEps);
}

TEST(Normalize, AffineRescaleAndRoundTrip) {
  Rng rng(9);
  const SceneExtents e;
  for (int t = 0; t < 100; ++t) {
    Tensor p(Shape{14, 3});
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t a = 0; a < 3; ++a) p(i, a) = rng.uniform(e.lo[a] - 0.5, e.hi[a] + 0.5);
    const Tensor n = normalize_coords(p, e);
    const Tensor back = denormalize_coords(n, e);
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t a = 0; a < 3; ++a) {
        const double ref = (p(i, a) - e.lo[a]) / (e.hi[a] - e.lo[a]);
        const double cl = std::clamp(ref, kNormalizeEps, 1 - kNormalizeEps);
        EXPECT_NEAR(n(i, a), cl, 1e-15);
        EXPECT_NEAR(back(i, a), e.lo[a] + cl * (e.hi[a] - e.lo[a]), 1e-12);
      }
  }
}

TEST(Normalize, RejectsEmptyExtents) {
  SceneExtents e;
  e.hi[1] = e.lo[1];
  EXPECT_THROW(normalize_coords(Tensor(Shape{1, 3}), e), ContractViolation);
}

// ---- serialization --------------------------------------------------------

TEST(Json, CalibRigRoundTrip) {
  const auto rig = CalibRig::desk_default();
  rig.validate();
  const auto back = calib_from_json(nlohmann::json::parse(to_json(rig).dump()));
  EXPECT_EQ(back.radar_to_world.rotation, rig.radar_to_world.rotation);
  EXPECT_EQ(back.radar_to_camera.translation, rig.radar_to_camera.translation);
  EXPECT_EQ(back.intrinsics.fx, rig.intrinsics.fx);
  EXPECT_EQ(back.intrinsics.cy, rig.intrinsics.cy);
}

TEST(Json, TemplateRoundTrip) {
  const auto k = make_template_keypoints(SkeletonId::mmvr17, TemplateKind::sitting);
  const auto back = template_from_json(nlohmann::json::parse(to_json(k).dump()));
  EXPECT_EQ(back.skeleton, SkeletonId::mmvr17);
  EXPECT_EQ(back.offsets, k.offsets);
}

TEST(Json, RejectsNonOrthonormalRotation) {
  auto j = to_json(CalibRig::desk_default());
  j["radar_to_world"]["rotation"][0] = 2.0;
  EXPECT_THROW(calib_from_json(j), ContractViolation);
}

}  // namespace
}  // namespace raptr
