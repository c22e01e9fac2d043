// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Pseudo-3D deformable attention over a horizontal (x, z) and a vertical
// (y, z) radar view, its multi-scale multi-head form, the decoupled 2D variant
// and the single-view form used by the cross-view encoder.
//
// Feature pyramids enter as one value matrix [sum_l rows_l*cols_l, d] with the
// S horizontal levels first and the S vertical levels after them.

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "raptr/deform.hpp"
#include "raptr/ops.hpp"
#include "raptr/param_store.hpp"
#include "raptr/rng.hpp"
#include "raptr/view_mask.hpp"

namespace raptr {

enum class AttentionVariant { pseudo3d, decoupled2d };

inline std::string to_string(AttentionVariant v) { return v == AttentionVariant::pseudo3d ? "pseudo3d" : "decoupled2d"; }
inline AttentionVariant attention_variant_from_string(const std::string& s) {
  if (s == "pseudo3d") return AttentionVariant::pseudo3d;
  if (s == "decoupled2d") return AttentionVariant::decoupled2d;
  throw ConfigError("unknown attention variant '" + s + "'");
}

/// Sizes of one deformable attention block.
struct DeformAttnDims {
  std::size_t d = 0;        // feature width
  std::size_t heads = 1;    // M
  std::size_t scales = 1;   // S (levels per view)
  std::size_t offsets = 1;  // N_offset per head and scale
  std::size_t refs = 1;     // reference points per query; offsets split evenly over them
  AttentionVariant variant = AttentionVariant::pseudo3d;
  bool planar = false;      // single-view 2D sampling (encoder)

  void validate() const {
    require_config(d > 0 && heads > 0 && scales > 0 && offsets > 0 && refs > 0, "attention sizes must be positive");
    require_config(d % heads == 0, "feature width d=" + std::to_string(d) + " is not divisible by M=" +
                                       std::to_string(heads));
    require_config(offsets % refs == 0, "N_offset must be a multiple of the reference count");
  }
  std::size_t head_dim() const { return d / heads; }
  std::size_t views() const { return planar ? 1 : 2; }
  std::size_t offset_width() const {
    if (planar) return heads * scales * offsets * 2;
    return variant == AttentionVariant::pseudo3d ? heads * scales * offsets * 3 : heads * 2 * scales * offsets * 2;
  }
  std::size_t weight_width() const { return heads * views() * scales * offsets; }
  std::size_t softmax_group() const {
    if (planar || variant == AttentionVariant::decoupled2d) return scales * offsets;
    return 2 * scales * offsets;
  }
};

/// Parameter names of one block inside a ParamStore.
struct DeformAttnParams {
  std::string prefix;
  std::string off_w() const { return prefix + ".offset.w"; }
  std::string off_b() const { return prefix + ".offset.b"; }
  std::string attn_w() const { return prefix + ".weight.w"; }
  std::string attn_b() const { return prefix + ".weight.b"; }
  std::string val_w() const { return prefix + ".value.w"; }
  std::string val_b() const { return prefix + ".value.b"; }
  std::string out_w() const { return prefix + ".out.w"; }
  std::string out_b() const { return prefix + ".out.b"; }
  std::string mask(const char* part) const { return prefix + ".mask." + part; }
};

inline Tensor uniform_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor(Shape{fan_in, fan_out}, -a, a);
}

inline void add_affine(ParamStore& store, const std::string& w, const std::string& b, std::size_t in, std::size_t out,
                       Rng& rng) {
  store.add(w, uniform_init(rng, in, out));
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(b, rng.uniform_tensor(Shape{out}, -a, a));
}

// Initial sampling offsets: a small fixed pattern per head around each
// reference (none when `radius` is 0), so that zero-weight offset projections
// still sample distinct points.
inline Tensor offset_bias_pattern(const DeformAttnDims& dm, double radius) {
  Tensor b(Shape{dm.offset_width()});
  if (radius == 0.0) return b;
  const std::size_t N = dm.offsets, per = N / dm.refs;
  auto dir2 = [](std::size_t k, std::size_t m, double* o) {
    const double th = 2.0 * M_PI * (static_cast<double>(k) + 0.5 * static_cast<double>(m % 2)) / 4.0;
    o[0] = std::cos(th);
    o[1] = std::sin(th);
  };
  std::size_t j = 0;
  for (std::size_t m = 0; m < dm.heads; ++m) {
    const double r = radius * static_cast<double>(1 + m / 2);
    if (dm.planar) {
      for (std::size_t s = 0; s < dm.scales; ++s)
        for (std::size_t n = 0; n < N; ++n, j += 2) {
          double o[2];
          dir2(n % per, m, o);
          b[j] = r * o[0];
          b[j + 1] = r * o[1];
        }
    } else if (dm.variant == AttentionVariant::pseudo3d) {
      static constexpr double tet[4][3] = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
      for (std::size_t s = 0; s < dm.scales; ++s)
        for (std::size_t n = 0; n < N; ++n, j += 3) {
          const double sgn = (m % 2) ? -1.0 : 1.0;
          for (int a = 0; a < 3; ++a) b[j + a] = sgn * r * tet[(n % per) % 4][a] / std::sqrt(3.0);
        }
    } else {
      for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t s = 0; s < dm.scales; ++s)
          for (std::size_t n = 0; n < N; ++n, j += 2) {
            double o[2];
            dir2(n % per, m, o);
            b[j] = r * o[0];
            b[j + 1] = r * o[1];
          }
    }
  }
  return b;
}

/// Registers the block's parameters. The offset and attention-weight
/// projections start at zero weights (uniform attention, fixed offset pattern).
inline void init_deform_attn(ParamStore& store, const DeformAttnParams& p, const DeformAttnDims& dm, Rng& rng,
                             double offset_radius, bool with_mask = false, std::size_t mask_hidden = 0) {
  dm.validate();
  store.add(p.off_w(), Tensor(Shape{dm.d, dm.offset_width()}));
  store.add(p.off_b(), offset_bias_pattern(dm, offset_radius));
  store.add(p.attn_w(), Tensor(Shape{dm.d, dm.weight_width()}));
  store.add(p.attn_b(), Tensor(Shape{dm.weight_width()}));
  add_affine(store, p.val_w(), p.val_b(), dm.d, dm.d, rng);
  add_affine(store, p.out_w(), p.out_b(), dm.d, dm.d, rng);
  if (with_mask) {
    const std::size_t h = mask_hidden ? mask_hidden : dm.d;
    add_affine(store, p.mask("w1"), p.mask("b1"), dm.d, h, rng);
    add_affine(store, p.mask("w2"), p.mask("b2"), h, dm.offsets * 2, rng);
  }
}

/// Intermediate tensors of one attention evaluation, for inspection.
struct DeformAttnTrace {
  Var offsets, weights, locations;
};

namespace ops {

// Generic block body once offsets and weights are known.
inline Var deform_attention_from(Var value_maps, Var loc, Var weights, const std::vector<LevelShape>& levels,
                                 const DeformAttnDims& dm, std::size_t Q, Var val_w, Var val_b, Var out_w, Var out_b) {
  Var v = affine(value_maps, val_w, val_b);
  const DeformGeometry g{levels, Q, dm.heads, dm.offsets, dm.head_dim()};
  return affine(deform_sample(v, loc, weights, g), out_w, out_b);
}

/// Two-view deformable attention (pseudo-3D or decoupled 2D, per dm.variant).
///
/// query [Q x d]; ref [Q x 3R] normalized (x, y, z) per reference point;
/// value_maps [sum rows*cols x d] with levels = S horizontal then S vertical
/// shapes (rows = x or y, cols = z); mask [Q, N, 2] (pseudo-3D only).
inline Var deform_attention(Var query, Var ref, Var value_maps, const std::vector<LevelShape>& levels,
                            const DeformAttnDims& dm, ParamStore& store, const DeformAttnParams& p,
                            std::optional<Var> mask = std::nullopt, DeformAttnTrace* trace = nullptr) {
  dm.validate();
  require(!dm.planar, "deform_attention: planar dims passed to the two-view block");
  require(levels.size() == 2 * dm.scales, "deform_attention: expected 2S level shapes");
  Tape& t = *query.tape;
  const std::size_t Q = query.value().rows();
  require(query.value().cols() == dm.d, "deform_attention: query width mismatch");
  Var off = affine(query, t.param(store, p.off_w()), t.param(store, p.off_b()));
  Var w = softmax(affine(query, t.param(store, p.attn_w()), t.param(store, p.attn_b())), dm.softmax_group());
  Var loc;
  if (dm.variant == AttentionVariant::pseudo3d) {
    if (mask) w = apply_view_mask(w, *mask, {Q, dm.heads, dm.scales, dm.offsets});
    loc = pseudo3d_locations(ref, off, Q, dm.heads, dm.scales, dm.offsets, dm.refs);
  } else {
    require(!mask, "deform_attention: the view mask applies to the pseudo-3D variant only");
    w = scale(w, 0.5);  // average of the two per-view aggregates
    loc = decoupled_locations(ref, off, Q, dm.heads, dm.scales, dm.offsets, dm.refs);
  }
  if (trace) *trace = {off, w, loc};
  return deform_attention_from(value_maps, loc, w, levels, dm, Q, t.param(store, p.val_w()),
                               t.param(store, p.val_b()), t.param(store, p.out_w()), t.param(store, p.out_b()));
}

/// Single-view deformable attention: query [Q x d], ref [Q x 2] normalized (row, col),
/// value_maps holding S levels of one view.
inline Var planar_attention(Var query, Var ref, Var value_maps, const std::vector<LevelShape>& levels,
                            const DeformAttnDims& dm, ParamStore& store, const DeformAttnParams& p) {
  dm.validate();
  require(dm.planar && levels.size() == dm.scales, "planar_attention: expected S level shapes");
  Tape& t = *query.tape;
  const std::size_t Q = query.value().rows();
  Var off = affine(query, t.param(store, p.off_w()), t.param(store, p.off_b()));
  Var w = softmax(affine(query, t.param(store, p.attn_w()), t.param(store, p.attn_b())), dm.softmax_group());
  Var loc = planar_locations(ref, off, Q, dm.heads, dm.scales, dm.offsets);
  return deform_attention_from(value_maps, loc, w, levels, dm, Q, t.param(store, p.val_w()),
                               t.param(store, p.val_b()), t.param(store, p.out_w()), t.param(store, p.out_b()));
}

inline Var view_mask_for(Var query, ParamStore& store, const DeformAttnParams& p, const DeformAttnDims& dm,
                         double lambda = kViewMaskLambda) {
  Tape& t = *query.tape;
  return compute_view_mask(query, t.param(store, p.mask("w1")), t.param(store, p.mask("b1")),
                           t.param(store, p.mask("w2")), t.param(store, p.mask("b2")), dm.offsets, lambda);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Single-query forms on plain tensors.

/// Parameters of the base (single-scale, single-head) mechanism.
struct Pseudo3dParams {
  Tensor offset_w, offset_b;  // [d x 3N], [3N]
  Tensor weight_w, weight_b;  // [d x 2N], [2N]  (N horizontal logits, then N vertical)
  Tensor w;                   // [d x d] output map applied to sampled features (row-vector convention)
};

inline Tensor propose_offsets(const Tensor& q, const Tensor& w, const Tensor& b, std::size_t offsets) {
  require(q.size() == w.dim(0), "propose_offsets: query length must equal the projection fan-in");
  require(w.cols() % (offsets * 3) == 0, "propose_offsets: projection width is not a multiple of 3N");
  Tensor y = kernels::affine_forward(q.reshaped(Shape{1, q.size()}), w, b);
  return y.reshaped(Shape{y.size() / 3, 3});
}

// Softmax over all logits per head; returns [N x 2] (columns = horizontal, vertical) in the base form.
inline Tensor propose_weights(const Tensor& q, const Tensor& w, const Tensor& b, std::size_t offsets) {
  require(q.size() == w.dim(0), "propose_weights: query length must equal the projection fan-in");
  require(w.cols() == 2 * offsets, "propose_weights: base form expects 2N logits");
  const Tensor a = kernels::softmax_forward(kernels::affine_forward(q.reshaped(Shape{1, q.size()}), w, b), 2 * offsets);
  Tensor out(Shape{offsets, 2});
  for (std::size_t i = 0; i < offsets; ++i) {
    out(i, 0) = a[i];
    out(i, 1) = a[offsets + i];
  }
  return out;
}

struct ProjectedSamples {
  Tensor horizontal;  // [N x 2] (x, z)
  Tensor vertical;    // [N x 2] (y, z)
};

inline ProjectedSamples project_samples(const std::array<double, 3>& ref, const Tensor& offsets) {
  require(offsets.cols() == 3, "project_samples: offsets must be [N x 3]");
  const std::size_t n = offsets.rows();
  ProjectedSamples s{Tensor(Shape{n, 2}), Tensor(Shape{n, 2})};
  for (std::size_t i = 0; i < n; ++i) {
    s.horizontal(i, 0) = ref[0] + offsets(i, 0);
    s.horizontal(i, 1) = ref[2] + offsets(i, 2);
    s.vertical(i, 0) = ref[1] + offsets(i, 1);
    s.vertical(i, 1) = ref[2] + offsets(i, 2);
  }
  return s;
}

namespace detail {

inline std::vector<LevelShape> map_levels(const Tensor& f_hor, const Tensor& f_ver) {
  require(f_hor.ndim() == 3 && f_ver.ndim() == 3, "attention: feature maps must be [rows x cols x d]");
  require(f_hor.dim(2) == f_ver.dim(2), "attention: feature widths differ between views");
  return {{f_hor.dim(0), f_hor.dim(1)}, {f_ver.dim(0), f_ver.dim(1)}};
}

inline Tensor stack_maps(const std::vector<const Tensor*>& maps) {
  std::size_t rows = 0;
  const std::size_t d = maps.front()->dim(2);
  for (const Tensor* m : maps) rows += m->dim(0) * m->dim(1);
  Tensor v(Shape{rows, d});
  std::size_t at = 0;
  for (const Tensor* m : maps) {
    std::copy(m->values().begin(), m->values().end(), v.data() + at);
    at += m->size();
  }
  return v;
}

}  // namespace detail

/// Base mechanism on one query: sum_i A_i0 W f_hor(x+dx, z+dz) + A_i1 W f_ver(y+dy, z+dz).
/// f_hor is [W x D x d] (rows = x), f_ver is [H x D x d] (rows = y); ref is normalized.
/// `mask` ([N x 2], 1 = keep) adjusts the weights first.
inline Tensor pseudo3d_attention(const Tensor& f_hor, const Tensor& f_ver, const std::array<double, 3>& ref,
                                 const Tensor& q, const Pseudo3dParams& p, const Tensor* mask = nullptr) {
  const auto levels = detail::map_levels(f_hor, f_ver);
  const std::size_t d = f_hor.dim(2), N = p.weight_w.cols() / 2;
  require(p.w.dim(0) == d, "pseudo3d_attention: W must have d rows");
  Tape t;
  ParamStore store;
  const DeformAttnParams names{"base"};
  store.add(names.off_w(), p.offset_w);
  store.add(names.off_b(), p.offset_b);
  store.add(names.attn_w(), p.weight_w);
  store.add(names.attn_b(), p.weight_b);
  store.add(names.val_w(), Tensor::identity(d));
  store.add(names.val_b(), Tensor(Shape{d}));
  store.add(names.out_w(), p.w);
  store.add(names.out_b(), Tensor(Shape{p.w.cols()}));
  const DeformAttnDims dm{d, 1, 1, N, 1, AttentionVariant::pseudo3d};
  std::optional<Var> mv;
  if (mask) mv = t.constant(mask->reshaped(Shape{1, N, 2}));
  Var out = ops::deform_attention(t.constant(q.reshaped(Shape{1, q.size()})),
                                  t.constant(Tensor::vector({ref[0], ref[1], ref[2]}).reshaped(Shape{1, 3})),
                                  t.constant(detail::stack_maps({&f_hor, &f_ver})), levels, dm, store, names, mv);
  return out.value().reshaped(Shape{out.value().size()});
}

/// Multi-scale multi-head parameters: per-head output blocks W_m [d_v x d] and
/// value blocks W'_m [d x d_v] packed as out_w rows and val_w columns.
struct Pseudo3dMsMhParams {
  std::size_t heads = 1;
  Tensor offset_w, offset_b;  // [d x M*S*N*3]
  Tensor weight_w, weight_b;  // [d x M*2*S*N]
  Tensor value_w;             // [d x d]   columns m*dv .. (m+1)*dv hold W'_m
  Tensor out_w;               // [d x d]   rows m*dv .. (m+1)*dv hold W_m
};

inline Tensor pseudo3d_attention_ms_mh(const std::vector<Tensor>& f_hor, const std::vector<Tensor>& f_ver,
                                       const std::array<double, 3>& ref, const Tensor& q,
                                       const Pseudo3dMsMhParams& p) {
  require(!f_hor.empty() && f_hor.size() == f_ver.size(), "pseudo3d_attention_ms_mh: pyramids must have equal depth");
  const std::size_t S = f_hor.size(), d = f_hor[0].dim(2), M = p.heads;
  require_config(M > 0 && d % M == 0,
                 "feature width d=" + std::to_string(d) + " is not divisible by M=" + std::to_string(M));
  const std::size_t N = p.weight_w.cols() / (M * 2 * S);
  std::vector<LevelShape> levels;
  std::vector<const Tensor*> maps;
  for (const auto* pyr : {&f_hor, &f_ver})
    for (const auto& f : *pyr) {
      require(f.ndim() == 3 && f.dim(2) == d, "pseudo3d_attention_ms_mh: inconsistent feature widths");
      levels.push_back({f.dim(0), f.dim(1)});
      maps.push_back(&f);
    }
  Tape t;
  ParamStore store;
  const DeformAttnParams names{"msmh"};
  store.add(names.off_w(), p.offset_w);
  store.add(names.off_b(), p.offset_b);
  store.add(names.attn_w(), p.weight_w);
  store.add(names.attn_b(), p.weight_b);
  store.add(names.val_w(), p.value_w);
  store.add(names.val_b(), Tensor(Shape{d}));
  store.add(names.out_w(), p.out_w);
  store.add(names.out_b(), Tensor(Shape{p.out_w.cols()}));
  const DeformAttnDims dm{d, M, S, N, 1, AttentionVariant::pseudo3d};
  Var out = ops::deform_attention(t.constant(q.reshaped(Shape{1, q.size()})),
                                  t.constant(Tensor::vector({ref[0], ref[1], ref[2]}).reshaped(Shape{1, 3})),
                                  t.constant(detail::stack_maps(maps)), levels, dm, store, names);
  return out.value().reshaped(Shape{out.value().size()});
}

/// Decoupled 2D parameters: each view proposes N 2D offsets and N weights.
struct Decoupled2dParams {
  Tensor offset_w, offset_b;  // [d x 2*N*2]  (horizontal (dx, dz) block, then vertical (dy, dz))
  Tensor weight_w, weight_b;  // [d x 2N]      per-view softmax over N
  Tensor w;                   // [d x d]
};

inline Tensor decoupled2d_attention(const Tensor& f_hor, const Tensor& f_ver, const std::array<double, 3>& ref,
                                    const Tensor& q, const Decoupled2dParams& p) {
  const auto levels = detail::map_levels(f_hor, f_ver);
  const std::size_t d = f_hor.dim(2), N = p.weight_w.cols() / 2;
  Tape t;
  ParamStore store;
  const DeformAttnParams names{"dec"};
  store.add(names.off_w(), p.offset_w);
  store.add(names.off_b(), p.offset_b);
  store.add(names.attn_w(), p.weight_w);
  store.add(names.attn_b(), p.weight_b);
  store.add(names.val_w(), Tensor::identity(d));
  store.add(names.val_b(), Tensor(Shape{d}));
  store.add(names.out_w(), p.w);
  store.add(names.out_b(), Tensor(Shape{p.w.cols()}));
  const DeformAttnDims dm{d, 1, 1, N, 1, AttentionVariant::decoupled2d};
  Var out = ops::deform_attention(t.constant(q.reshaped(Shape{1, q.size()})),
                                  t.constant(Tensor::vector({ref[0], ref[1], ref[2]}).reshaped(Shape{1, 3})),
                                  t.constant(detail::stack_maps({&f_hor, &f_ver})), levels, dm, store, names);
  return out.value().reshaped(Shape{out.value().size()});
}

}  // namespace raptr
