// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "raptr/grad_check.hpp"
#include "raptr/ops.hpp"
#include "test_util.hpp"

namespace raptr {
namespace {

using testing::rand_tensor;

TEST(Tape, BackwardVisitsNodesInReverseOrder) {
  Tape t;
  Var x = t.variable(Tensor::vector({1.0, 2.0}));
  Var a = ops::square(x);
  Var b = ops::exp(a);
  Var c = ops::sum(b);
  t.backward(c);
  const std::vector<std::size_t> expect = {c.id, b.id, a.id};
  EXPECT_EQ(t.visit_log(), expect);
}

TEST(Tape, ConstantSubgraphsRecordNoBackward) {
  Tape t;
  Var k = t.constant(Tensor::vector({1.0, 2.0}));
  Var x = t.variable(Tensor::vector({0.5, 0.25}));
  Var kk = ops::exp(ops::square(k));
  Var y = ops::sum(ops::mul(kk, x));
  t.backward(y);
  for (std::size_t id : t.visit_log()) EXPECT_GT(id, kk.id);
  EXPECT_FALSE(t.has_grad(k.id));
  EXPECT_NEAR(t.grad(x)[0], std::exp(1.0), 1e-15);
}

TEST(Tape, GradientOfSumEqualsSumOfGradients) {
  Rng rng(1);
  const Tensor x0 = rand_tensor(rng, {3, 4}), w0 = rand_tensor(rng, {4, 2});
  auto g1 = [](Var x, Var w) { return ops::sum(ops::sigmoid(ops::matmul(x, w))); };
  auto g2 = [](Var x, Var w) { return ops::sum(ops::square(ops::matmul(ops::exp(x), w))); };

  auto grads = [&](int which) {
    Tape t;
    Var x = t.variable(x0), w = t.variable(w0);
    Var y = which == 0 ? g1(x, w) : which == 1 ? g2(x, w) : ops::add(g1(x, w), g2(x, w));
    t.backward(y);
    return std::pair{t.grad(x), t.grad(w)};
  };
  auto [ax, aw] = grads(0);
  auto [bx, bw] = grads(1);
  auto [sx, sw] = grads(2);
  ax.add_inplace(bx);
  aw.add_inplace(bw);
  EXPECT_LE(max_abs_diff(ax, sx), 1e-12);
  EXPECT_LE(max_abs_diff(aw, sw), 1e-12);
}

TEST(Tape, SharedInputAccumulates) {
  Tape t;
  Var x = t.variable(Tensor::scalar(2.0));
  Var y = ops::add(ops::mul(x, x), x);  // x^2 + x
  t.backward(y);
  EXPECT_EQ(t.grad(x)[0], 5.0);
}

TEST(Tape, ParamGradientsFlushIntoStore) {
  ParamStore ps;
  ps.add("w", Tensor::vector({1.0, -2.0}));
  for (int rep = 0; rep < 2; ++rep) {
    Tape t;
    Var w = t.param(ps, "w");
    EXPECT_EQ(t.param(ps, "w").id, w.id);
    t.backward(ops::sum(ops::square(w)));
    t.flush_param_grads();
  }
  EXPECT_EQ(ps.grad("w")[0], 4.0);
  EXPECT_EQ(ps.grad("w")[1], -8.0);
  ps.zero_grad();
  EXPECT_EQ(ps.grad("w")[0], 0.0);
}

TEST(Tape, NonScalarRootNeedsSeed) {
  Tape t;
  Var x = t.variable(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(ops::square(x)), ContractViolation);
}

TEST(GradCheckParams, ProbesStoreEntries) {
  Rng rng(2);
  ParamStore ps;
  ps.add("w", rand_tensor(rng, {3, 2}));
  ps.add("b", rand_tensor(rng, {2}));
  const Tensor x = rand_tensor(rng, {4, 3});
  const auto r = grad_check_params(
      [&](Tape& t, ParamStore& s) {
        return ops::sum(ops::sigmoid(ops::affine(t.constant(x), t.param(s, "w"), t.param(s, "b"))));
      },
      ps);
  EXPECT_EQ(r.probes, 8u);
  EXPECT_LE(r.max_rel_error, 1e-8);
}

}  // namespace
}  // namespace raptr
