// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-level deformable sampling.
//
//   value   [sum_l rows_l*cols_l, M*dv]   levels stacked row-major
//   loc     [Q, M, L, P, 2]               normalized (row, col) in [0, 1]
//   weight  [Q, M, L, P]
//   out     [Q, M*dv]                     out[q, m] = sum_{l,p} w * F_l(loc)[m]
//
// A normalized coordinate c maps to pixel c * extent - 0.5, so 0 and 1 are the
// outer edges of the first and last pixel.

#pragma once

#include <vector>

#include "raptr/kernels.hpp"
#include "raptr/tape.hpp"

namespace raptr {

struct LevelShape {
  std::size_t rows = 0, cols = 0;
  std::size_t size() const { return rows * cols; }
  friend bool operator==(const LevelShape&, const LevelShape&) = default;
};

struct DeformGeometry {
  std::vector<LevelShape> levels;
  std::size_t queries = 0, heads = 0, points = 0, head_dim = 0;

  std::size_t num_levels() const { return levels.size(); }
  std::size_t value_rows() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.size();
    return n;
  }
  std::size_t level_start(std::size_t l) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < l; ++i) n += levels[i].size();
    return n;
  }
  std::size_t samples_per_query() const { return heads * levels.size() * points; }

  void validate(const Tensor& value, const Tensor& loc, const Tensor& w) const {
    require(value.size() == value_rows() * heads * head_dim,
            "deform_sample: value has shape " + shape_str(value.shape()) + ", expected [" +
                std::to_string(value_rows()) + " x " + std::to_string(heads * head_dim) + "]");
    require(loc.size() == queries * samples_per_query() * 2, "deform_sample: location tensor size mismatch");
    require(w.size() == queries * samples_per_query(), "deform_sample: weight tensor size mismatch");
  }
};

namespace kernels {

inline Tensor deform_sample_forward(const Tensor& value, const Tensor& loc, const Tensor& w, const DeformGeometry& g) {
  g.validate(value, loc, w);
  const std::size_t C = g.heads * g.head_dim, L = g.num_levels();
  Tensor out(Shape{g.queries, C});
  for (std::size_t q = 0; q < g.queries; ++q)
    for (std::size_t m = 0; m < g.heads; ++m) {
      double* o = out.data() + q * C + m * g.head_dim;
      for (std::size_t l = 0; l < L; ++l) {
        const auto& lv = g.levels[l];
        const MapView map{value.data() + g.level_start(l) * C + m * g.head_dim, lv.rows, lv.cols, g.head_dim, C};
        for (std::size_t p = 0; p < g.points; ++p) {
          const std::size_t s = ((q * g.heads + m) * L + l) * g.points + p;
          const double u = loc[2 * s] * static_cast<double>(lv.rows) - 0.5;
          const double v = loc[2 * s + 1] * static_cast<double>(lv.cols) - 0.5;
          bilinear_accumulate(map, u, v, w[s], o);
        }
      }
    }
  return out;
}

struct DeformGrads {
  Tensor dvalue, dloc, dweight;
};

inline DeformGrads deform_sample_backward(const Tensor& value, const Tensor& loc, const Tensor& w,
                                          const DeformGeometry& g, const Tensor& dout, bool want_value = true) {
  const std::size_t C = g.heads * g.head_dim, L = g.num_levels();
  DeformGrads r{want_value ? Tensor(value.shape()) : Tensor(), Tensor(loc.shape()), Tensor(w.shape())};
  for (std::size_t q = 0; q < g.queries; ++q)
    for (std::size_t m = 0; m < g.heads; ++m) {
      const double* go = dout.data() + q * C + m * g.head_dim;
      for (std::size_t l = 0; l < L; ++l) {
        const auto& lv = g.levels[l];
        const std::size_t off = g.level_start(l) * C + m * g.head_dim;
        const MapView map{value.data() + off, lv.rows, lv.cols, g.head_dim, C};
        for (std::size_t p = 0; p < g.points; ++p) {
          const std::size_t s = ((q * g.heads + m) * L + l) * g.points + p;
          const double u = loc[2 * s] * static_cast<double>(lv.rows) - 0.5;
          const double v = loc[2 * s + 1] * static_cast<double>(lv.cols) - 0.5;
          const auto b = bilinear_accumulate_backward(map, u, v, w[s], go, want_value ? r.dvalue.data() + off : nullptr);
          r.dloc[2 * s] += b.du * static_cast<double>(lv.rows);
          r.dloc[2 * s + 1] += b.dv * static_cast<double>(lv.cols);
          r.dweight[s] += b.dscale;
        }
      }
    }
  return r;
}

}  // namespace kernels

namespace ops {

inline Var deform_sample(Var value, Var loc, Var weight, const DeformGeometry& g) {
  Tensor out = kernels::deform_sample_forward(value.value(), loc.value(), weight.value(), g);
  const std::size_t iv = value.id, il = loc.id, iw = weight.id;
  return value.tape->record(std::move(out), {value, loc, weight}, [iv, il, iw, g](Tape& t, std::size_t self) {
    auto r = kernels::deform_sample_backward(t.value(iv), t.value(il), t.value(iw), g, t.grad(self),
                                             t.requires_grad(iv));
    if (t.requires_grad(iv)) t.grad(iv).add_inplace(r.dvalue);
    t.accumulate(il, r.dloc);
    t.accumulate(iw, r.dweight);
  });
}

// out[j] = a[ia[j]] + b[ib[j]]; the sparse linear map behind all sampling-location builders.
inline Var gather_add(Var a, Var b, std::vector<std::size_t> ia, std::vector<std::size_t> ib, Shape shape) {
  require(ia.size() == ib.size() && ia.size() == shape_numel(shape), "gather_add: index size mismatch");
  Tensor out(std::move(shape));
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  for (std::size_t j = 0; j < ia.size(); ++j) {
    require(ia[j] < va.size() && ib[j] < vb.size(), "gather_add: index out of range");
    out[j] = va[ia[j]] + vb[ib[j]];
  }
  const std::size_t xa = a.id, xb = b.id;
  return a.tape->record(std::move(out), {a, b},
                        [xa, xb, ia = std::move(ia), ib = std::move(ib)](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          if (t.requires_grad(xa)) {
                            Tensor& ga = t.grad(xa);
                            for (std::size_t j = 0; j < ia.size(); ++j) ga[ia[j]] += g[j];
                          }
                          if (t.requires_grad(xb)) {
                            Tensor& gb = t.grad(xb);
                            for (std::size_t j = 0; j < ib.size(); ++j) gb[ib[j]] += g[j];
                          }
                        });
}

// Pseudo-3D locations. ref [Q, R*3] holds R reference points (x, y, z) per query;
// off [Q, M, S, N, 3] holds 3D offsets, offset n belonging to reference n / (N / R).
// Output [Q, M, 2S, N, 2]: levels 0..S-1 sample the horizontal view at (x, z),
// levels S..2S-1 the vertical view at (y, z).
inline Var pseudo3d_locations(Var ref, Var off, std::size_t Q, std::size_t M, std::size_t S, std::size_t N,
                              std::size_t R) {
  require(R >= 1 && N % R == 0, "pseudo3d_locations: offsets must split evenly over reference points");
  require(ref.value().size() == Q * R * 3, "pseudo3d_locations: reference shape mismatch");
  require(off.value().size() == Q * M * S * N * 3, "pseudo3d_locations: offset shape mismatch");
  const std::size_t per = N / R, n_out = Q * M * 2 * S * N * 2;
  std::vector<std::size_t> ia(n_out), ib(n_out);
  std::size_t j = 0;
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < 2; ++c, ++j) {
              const std::size_t axis = c == 1 ? 2 : v;  // (x|y, z)
              ia[j] = (q * R + n / per) * 3 + axis;
              ib[j] = (((q * M + m) * S + s) * N + n) * 3 + axis;
            }
  return gather_add(ref, off, std::move(ia), std::move(ib), Shape{Q, M, 2 * S, N, 2});
}

// Per-view 2D locations for the decoupled variant. off [Q, M, 2, S, N, 2] holds
// (horizontal (dx, dz) | vertical (dy, dz)) offsets. Output as pseudo3d_locations.
inline Var decoupled_locations(Var ref, Var off, std::size_t Q, std::size_t M, std::size_t S, std::size_t N,
                               std::size_t R) {
  require(R >= 1 && N % R == 0, "decoupled_locations: offsets must split evenly over reference points");
  require(ref.value().size() == Q * R * 3, "decoupled_locations: reference shape mismatch");
  require(off.value().size() == Q * M * 2 * S * N * 2, "decoupled_locations: offset shape mismatch");
  const std::size_t per = N / R, n_out = Q * M * 2 * S * N * 2;
  std::vector<std::size_t> ia(n_out), ib(n_out);
  for (std::size_t j = 0, q = 0; q < Q; ++q)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < 2; ++c, ++j) {
              ia[j] = (q * R + n / per) * 3 + (c == 1 ? 2 : v);
              ib[j] = j;
            }
  return gather_add(ref, off, std::move(ia), std::move(ib), Shape{Q, M, 2 * S, N, 2});
}

// Single-view 2D locations: ref [Q, 2] (row, col), off [Q, M, L, N, 2].
inline Var planar_locations(Var ref, Var off, std::size_t Q, std::size_t M, std::size_t L, std::size_t N) {
  require(ref.value().size() == Q * 2, "planar_locations: reference shape mismatch");
  require(off.value().size() == Q * M * L * N * 2, "planar_locations: offset shape mismatch");
  const std::size_t n_out = Q * M * L * N * 2;
  std::vector<std::size_t> ia(n_out), ib(n_out);
  for (std::size_t j = 0, q = 0; q < Q; ++q)
    for (std::size_t k = 0; k < M * L * N; ++k)
      for (std::size_t c = 0; c < 2; ++c, ++j) {
        ia[j] = q * 2 + c;
        ib[j] = j;
      }
  return gather_add(ref, off, std::move(ia), std::move(ib), Shape{Q, M, L, N, 2});
}

}  // namespace ops
}  // namespace raptr
