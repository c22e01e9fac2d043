// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// View selection mask and attention-weight redistribution.
//
// Weights are laid out [G, 2, S*N] (G = queries * heads; view-major, then
// scale, then offset). The mask is [Q, N, 2] with 1 = keep, shared by every
// head and scale of a query. Per group, with rows r = (s, i):
//
//   n_r  = (1 - m0)(1 - m1)              mass of rows losing both views
//   R    = sum_r n_r (A0 + A1)
//   c    = R / sum_r (m0 + m1)           share for each surviving entry
//   A0'  = m0 A0 + m0 (1 - m1) A1 + m0 c
//   A1'  = m1 A1 + m1 (1 - m0) A0 + m1 c
//
// On binary masks this is: [1,1] unchanged, [0,1]/[1,0] move the row's mass to
// the kept view, [0,0] spread the row's mass evenly over all surviving entries.
// sum(A') == sum(A) for any mask in [0,1]. With no survivors A is returned as is.

#pragma once

#include <string>
#include <vector>

#include "raptr/kernels.hpp"
#include "raptr/rng.hpp"
#include "raptr/ops.hpp"

namespace raptr {

inline constexpr double kViewMaskLambda = 1e5;

enum class ViewMaskMode { both, horizontal, vertical, random, adaptive };

inline std::string to_string(ViewMaskMode m) {
  switch (m) {
    case ViewMaskMode::both: return "both";
    case ViewMaskMode::horizontal: return "horizontal";
    case ViewMaskMode::vertical: return "vertical";
    case ViewMaskMode::random: return "random";
    case ViewMaskMode::adaptive: return "adaptive";
  }
  return "?";
}

inline ViewMaskMode view_mask_mode_from_string(const std::string& s) {
  for (auto m : {ViewMaskMode::both, ViewMaskMode::horizontal, ViewMaskMode::vertical, ViewMaskMode::random,
                 ViewMaskMode::adaptive})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown view mask mode '" + s + "'");
}

struct ViewMaskShape {
  std::size_t queries = 0, heads = 0, scales = 0, offsets = 0;
  std::size_t groups() const { return queries * heads; }
  std::size_t rows() const { return scales * offsets; }
};

namespace kernels {

inline Tensor view_mask_forward(const Tensor& a, const Tensor& mask, const ViewMaskShape& sh) {
  const std::size_t G = sh.groups(), Rn = sh.rows(), N = sh.offsets;
  require(a.size() == G * 2 * Rn, "apply_view_mask: weight shape mismatch");
  require(mask.size() == sh.queries * N * 2, "apply_view_mask: mask shape mismatch");
  Tensor out(a.shape());
  for (std::size_t g = 0; g < G; ++g) {
    const double* A0 = a.data() + g * 2 * Rn;
    const double* A1 = A0 + Rn;
    double* O0 = out.data() + g * 2 * Rn;
    double* O1 = O0 + Rn;
    const double* mq = mask.data() + (g / sh.heads) * N * 2;
    double R = 0.0, sm = 0.0;
    for (std::size_t r = 0; r < Rn; ++r) {
      const double m0 = mq[2 * (r % N)], m1 = mq[2 * (r % N) + 1];
      R += (1 - m0) * (1 - m1) * (A0[r] + A1[r]);
      sm += m0 + m1;
    }
    if (sm == 0.0) {
      std::copy(A0, A0 + 2 * Rn, O0);
      continue;
    }
    const double c = R / sm;
    for (std::size_t r = 0; r < Rn; ++r) {
      const double m0 = mq[2 * (r % N)], m1 = mq[2 * (r % N) + 1];
      O0[r] = m0 * A0[r] + m0 * (1 - m1) * A1[r] + m0 * c;
      O1[r] = m1 * A1[r] + m1 * (1 - m0) * A0[r] + m1 * c;
    }
  }
  return out;
}

struct ViewMaskGrads {
  Tensor da, dmask;
};

inline ViewMaskGrads view_mask_backward(const Tensor& a, const Tensor& mask, const ViewMaskShape& sh,
                                        const Tensor& dout) {
  const std::size_t G = sh.groups(), Rn = sh.rows(), N = sh.offsets;
  ViewMaskGrads r{Tensor(a.shape()), Tensor(mask.shape())};
  for (std::size_t g = 0; g < G; ++g) {
    const double* A0 = a.data() + g * 2 * Rn;
    const double* A1 = A0 + Rn;
    const double* G0 = dout.data() + g * 2 * Rn;
    const double* G1 = G0 + Rn;
    double* dA0 = r.da.data() + g * 2 * Rn;
    double* dA1 = dA0 + Rn;
    const double* mq = mask.data() + (g / sh.heads) * N * 2;
    double* dm = r.dmask.data() + (g / sh.heads) * N * 2;
    double R = 0.0, sm = 0.0, gc = 0.0;
    for (std::size_t r_ = 0; r_ < Rn; ++r_) {
      const double m0 = mq[2 * (r_ % N)], m1 = mq[2 * (r_ % N) + 1];
      R += (1 - m0) * (1 - m1) * (A0[r_] + A1[r_]);
      sm += m0 + m1;
      gc += G0[r_] * m0 + G1[r_] * m1;
    }
    if (sm == 0.0) {
      std::copy(G0, G0 + 2 * Rn, dA0);
      continue;
    }
    const double c = R / sm;
    for (std::size_t r_ = 0; r_ < Rn; ++r_) {
      const std::size_t i = r_ % N;
      const double m0 = mq[2 * i], m1 = mq[2 * i + 1];
      const double nr = (1 - m0) * (1 - m1), s01 = A0[r_] + A1[r_];
      dA0[r_] = G0[r_] * m0 + G1[r_] * m1 * (1 - m0) + gc * nr / sm;
      dA1[r_] = G1[r_] * m1 + G0[r_] * m0 * (1 - m1) + gc * nr / sm;
      dm[2 * i] += G0[r_] * (A0[r_] + (1 - m1) * A1[r_] + c) - G1[r_] * m1 * A0[r_] +
                   gc * (-(1 - m1) * s01 / sm - R / (sm * sm));
      dm[2 * i + 1] += G1[r_] * (A1[r_] + (1 - m0) * A0[r_] + c) - G0[r_] * m0 * A1[r_] +
                       gc * (-(1 - m0) * s01 / sm - R / (sm * sm));
    }
  }
  return r;
}

}  // namespace kernels

// Plain form on a single query: weights [N x 2] (columns = views), mask [N x 2].
inline Tensor apply_view_mask(const Tensor& weights, const Tensor& mask) {
  require(weights.ndim() == 2 && weights.cols() == 2, "apply_view_mask: expected [N x 2] weights");
  require(mask.shape() == weights.shape(), "apply_view_mask: mask shape must equal weight shape");
  const std::size_t N = weights.rows();
  Tensor a(Shape{2, N});
  for (std::size_t i = 0; i < N; ++i) {
    a[i] = weights(i, 0);
    a[N + i] = weights(i, 1);
  }
  const Tensor o = kernels::view_mask_forward(a, mask, {1, 1, 1, N});
  Tensor out(weights.shape());
  for (std::size_t i = 0; i < N; ++i) {
    out(i, 0) = o[i];
    out(i, 1) = o[N + i];
  }
  return out;
}

// Constant mask for the fixed patterns; `random` draws an independent binary
// pair per offset that keeps at least one view.
inline Tensor fixed_view_mask(ViewMaskMode mode, std::size_t queries, std::size_t offsets, Rng* rng = nullptr) {
  Tensor m(Shape{queries, offsets, 2}, 1.0);
  for (std::size_t j = 0; j < queries * offsets; ++j) {
    switch (mode) {
      case ViewMaskMode::horizontal: m[2 * j + 1] = 0.0; break;
      case ViewMaskMode::vertical: m[2 * j] = 0.0; break;
      case ViewMaskMode::random: {
        require(rng != nullptr, "fixed_view_mask: random pattern needs an Rng");
        const auto k = rng->index(3);  // [1,1], [1,0], [0,1]
        if (k == 1) m[2 * j + 1] = 0.0;
        if (k == 2) m[2 * j] = 0.0;
        break;
      }
      default: break;
    }
  }
  return m;
}

// M = sigmoid(lambda * FFN(q)) on one query -> [N x 2]
inline Tensor compute_view_mask(const Tensor& q, const kernels::FfnWeights& ffn, std::size_t offsets,
                                double lambda = kViewMaskLambda) {
  Tensor y = kernels::ffn_forward(q.reshaped(Shape{1, q.size()}), ffn);
  require(y.size() == 2 * offsets, "compute_view_mask: FFN width must be 2 * N_offset");
  for (auto& v : y.values()) v = kernels::sigmoid(lambda * v);
  return y.reshaped(Shape{offsets, 2});
}

namespace ops {

inline Var apply_view_mask(Var a, Var mask, const ViewMaskShape& sh) {
  Tensor out = kernels::view_mask_forward(a.value(), mask.value(), sh);
  const std::size_t ia = a.id, im = mask.id;
  return a.tape->record(std::move(out), {a, mask}, [ia, im, sh](Tape& t, std::size_t self) {
    auto g = kernels::view_mask_backward(t.value(ia), t.value(im), sh, t.grad(self));
    t.accumulate(ia, g.da);
    t.accumulate(im, g.dmask);
  });
}

// M = sigmoid(lambda * FFN(q)); q [Q x d] -> [Q, N, 2]
inline Var compute_view_mask(Var q, Var w1, Var b1, Var w2, Var b2, std::size_t offsets,
                             double lambda = kViewMaskLambda) {
  Var logits = ffn(q, w1, b1, w2, b2);
  require(logits.value().cols() == offsets * 2, "compute_view_mask: FFN width must be 2 * N_offset");
  return reshape(sigmoid(scale(logits, lambda)), Shape{q.value().rows(), offsets, 2});
}

}  // namespace ops
}  // namespace raptr
