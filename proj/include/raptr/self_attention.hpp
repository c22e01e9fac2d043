// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-head dot-product self-attention over fixed-size groups of rows.
//
// Rows are split into consecutive groups of `group` rows; attention never
// crosses a group boundary. This lets the joint decoder run every subject's
// K joint queries in one call.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "raptr/attention.hpp"
#include "raptr/ops.hpp"
#include "raptr/param_store.hpp"

namespace raptr {

namespace kernels {

struct SelfAttnShape {
  std::size_t rows = 0, width = 0, heads = 1, group = 1;
  std::size_t head_dim() const { return width / heads; }
  void validate() const {
    require(heads > 0 && width % heads == 0, "self-attention: width must be divisible by the head count");
    require(group > 0 && rows % group == 0, "self-attention: row count must be a multiple of the group size");
  }
};

// Attention probabilities [groups, heads, g, g] stored flat.
inline Tensor self_attn_probs(const Tensor& q, const Tensor& k, const SelfAttnShape& s) {
  const std::size_t g = s.group, dh = s.head_dim(), G = s.rows / g;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor p(Shape{G * s.heads * g * g});
  for (std::size_t b = 0; b < G; ++b)
    for (std::size_t h = 0; h < s.heads; ++h) {
      double* P = p.data() + (b * s.heads + h) * g * g;
      for (std::size_t i = 0; i < g; ++i) {
        const double* qi = q.data() + (b * g + i) * s.width + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < g; ++j) {
          const double* kj = k.data() + (b * g + j) * s.width + h * dh;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          P[i * g + j] = acc * inv;
          mx = std::max(mx, P[i * g + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < g; ++j) z += (P[i * g + j] = std::exp(P[i * g + j] - mx));
        for (std::size_t j = 0; j < g; ++j) P[i * g + j] /= z;
      }
    }
  return p;
}

inline Tensor self_attn_apply(const Tensor& p, const Tensor& v, const SelfAttnShape& s) {
  const std::size_t g = s.group, dh = s.head_dim(), G = s.rows / g;
  Tensor out(Shape{s.rows, s.width});
  for (std::size_t b = 0; b < G; ++b)
    for (std::size_t h = 0; h < s.heads; ++h) {
      const double* P = p.data() + (b * s.heads + h) * g * g;
      for (std::size_t i = 0; i < g; ++i) {
        double* o = out.data() + (b * g + i) * s.width + h * dh;
        for (std::size_t j = 0; j < g; ++j) {
          const double* vj = v.data() + (b * g + j) * s.width + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += P[i * g + j] * vj[c];
        }
      }
    }
  return out;
}

struct SelfAttnGrads {
  Tensor dq, dk, dv;
};

inline SelfAttnGrads self_attn_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& p,
                                        const Tensor& dout, const SelfAttnShape& s) {
  const std::size_t g = s.group, dh = s.head_dim(), G = s.rows / g;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  SelfAttnGrads r{Tensor(q.shape()), Tensor(k.shape()), Tensor(v.shape())};
  std::vector<double> dp(g);
  for (std::size_t b = 0; b < G; ++b)
    for (std::size_t h = 0; h < s.heads; ++h) {
      const double* P = p.data() + (b * s.heads + h) * g * g;
      for (std::size_t i = 0; i < g; ++i) {
        const std::size_t ri = (b * g + i) * s.width + h * dh;
        double dot = 0.0;
        for (std::size_t j = 0; j < g; ++j) {
          const std::size_t rj = (b * g + j) * s.width + h * dh;
          double a = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            a += dout[ri + c] * v[rj + c];
            r.dv[rj + c] += P[i * g + j] * dout[ri + c];
          }
          dp[j] = a;
          dot += P[i * g + j] * a;
        }
        for (std::size_t j = 0; j < g; ++j) {
          const std::size_t rj = (b * g + j) * s.width + h * dh;
          const double ds = P[i * g + j] * (dp[j] - dot) * inv;
          for (std::size_t c = 0; c < dh; ++c) {
            r.dq[ri + c] += ds * k[rj + c];
            r.dk[rj + c] += ds * q[ri + c];
          }
        }
      }
    }
  return r;
}

}  // namespace kernels

namespace ops {

/// softmax(q k^T / sqrt(d_h)) v per head and group; q, k, v are [rows x width].
inline Var grouped_attention(Var q, Var k, Var v, std::size_t heads, std::size_t group) {
  const kernels::SelfAttnShape s{q.value().rows(), q.value().cols(), heads, group};
  s.validate();
  require(k.value().shape() == q.value().shape() && v.value().shape() == q.value().shape(),
          "grouped_attention: q, k, v shapes differ");
  Tensor p = kernels::self_attn_probs(q.value(), k.value(), s);
  Tensor out = kernels::self_attn_apply(p, v.value(), s);
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(std::move(out), {q, k, v},
                        [iq, ik, iv, s, p = std::move(p)](Tape& t, std::size_t self) {
                          auto g = kernels::self_attn_backward(t.value(iq), t.value(ik), t.value(iv), p, t.grad(self), s);
                          t.accumulate(iq, g.dq);
                          t.accumulate(ik, g.dk);
                          t.accumulate(iv, g.dv);
                        });
}

}  // namespace ops

struct SelfAttnParams {
  std::string prefix;
  std::string w(const char* which) const { return prefix + ".w" + which; }
  std::string b(const char* which) const { return prefix + ".b" + which; }
};

inline void init_self_attn(ParamStore& store, const SelfAttnParams& p, std::size_t d, Rng& rng) {
  for (const char* x : {"q", "k", "v", "o"}) add_affine(store, p.w(x), p.b(x), d, d, rng);
}

namespace ops {

/// Projected multi-head self-attention block (without residual).
inline Var self_attention(Var x, ParamStore& store, const SelfAttnParams& p, std::size_t heads, std::size_t group) {
  Tape& t = *x.tape;
  auto proj = [&](const char* w) { return affine(x, t.param(store, p.w(w)), t.param(store, p.b(w))); };
  Var a = grouped_attention(proj("q"), proj("k"), proj("v"), heads, group);
  return affine(a, t.param(store, p.w("o")), t.param(store, p.b("o")));
}

}  // namespace ops
}  // namespace raptr
