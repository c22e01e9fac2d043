// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Plain forward/backward kernels. The tape ops in ops.hpp are thin wrappers
// around these, so every kernel here can also be used without a tape.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "raptr/tensor.hpp"

namespace raptr::kernels {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kLogitClamp = 1e-4;

// C = A[n x k] * B[k x m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "matmul: inner extents " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor c(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data() + i * k;
    double* cr = c.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

// C = A^T[k x n] * B[n x m] for A[n x k]
inline Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == n, "matmul_at_b: row mismatch");
  Tensor c(Shape{k, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data() + i * k;
    const double* br = b.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      double* cr = c.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

// C = A[n x k] * B^T for B[m x k]
inline Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  require(b.cols() == k, "matmul_a_bt: column mismatch");
  Tensor c(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      c(i, j) = s;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// affine map y = x W + b

inline Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(b.size() == w.cols(), "affine: bias length " + std::to_string(b.size()) +
                                    " vs output width " + std::to_string(w.cols()));
  Tensor y = matmul(x, w);
  const std::size_t m = y.cols();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) y(i, j) += b[j];
  return y;
}

struct AffineGrads {
  Tensor dx, dw, db;
};

inline AffineGrads affine_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  AffineGrads g;
  g.dx = matmul_a_bt(dy, w);
  g.dw = matmul_at_b(x, dy);
  g.db = Tensor(Shape{w.cols()});
  for (std::size_t i = 0; i < dy.rows(); ++i)
    for (std::size_t j = 0; j < dy.cols(); ++j) g.db[j] += dy(i, j);
  return g;
}

// ---------------------------------------------------------------------------
// softmax over contiguous groups of `group` elements

inline Tensor softmax_forward(const Tensor& x, std::size_t group) {
  require(group > 0 && x.size() % group == 0, "softmax: group does not divide tensor");
  Tensor y(x.shape());
  for (std::size_t g0 = 0; g0 < x.size(); g0 += group) {
    double mx = x[g0];
    for (std::size_t i = 1; i < group; ++i) mx = std::max(mx, x[g0 + i]);
    double s = 0.0;
    for (std::size_t i = 0; i < group; ++i) {
      y[g0 + i] = std::exp(x[g0 + i] - mx);
      s += y[g0 + i];
    }
    for (std::size_t i = 0; i < group; ++i) y[g0 + i] /= s;
  }
  return y;
}

inline Tensor softmax_backward(const Tensor& y, const Tensor& dy, std::size_t group) {
  Tensor dx(y.shape());
  for (std::size_t g0 = 0; g0 < y.size(); g0 += group) {
    double dot = 0.0;
    for (std::size_t i = 0; i < group; ++i) dot += y[g0 + i] * dy[g0 + i];
    for (std::size_t i = 0; i < group; ++i) dx[g0 + i] = y[g0 + i] * (dy[g0 + i] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis

struct LayerNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

inline Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias,
                                 LayerNormCache* cache = nullptr, double eps = kLayerNormEps) {
  const std::size_t n = x.rows(), m = x.cols();
  require(m >= 2, "layer_norm: feature axis must have length >= 2");
  require(gain.size() == m && bias.size() == m, "layer_norm: gain/bias width mismatch");
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += x(i, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat(i, j) = (x(i, j) - mean) * inv_std[i];
      y(i, j) = xhat(i, j) * gain[j] + bias[j];
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(inv_std)};
  return y;
}

struct LayerNormGrads {
  Tensor dx, dgain, dbias;
};

inline LayerNormGrads layer_norm_backward(const LayerNormCache& c, const Tensor& gain, const Tensor& dy) {
  const std::size_t n = dy.rows(), m = dy.cols();
  LayerNormGrads g{Tensor(dy.shape()), Tensor(Shape{m}), Tensor(Shape{m})};
  std::vector<double> dxhat(m);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dxhat[j] = dy(i, j) * gain[j];
      g.dgain[j] += dy(i, j) * c.xhat(i, j);
      g.dbias[j] += dy(i, j);
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * c.xhat(i, j);
    }
    mean_d /= static_cast<double>(m);
    mean_dx /= static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j)
      g.dx(i, j) = c.inv_std[i] * (dxhat[j] - mean_d - c.xhat(i, j) * mean_dx);
  }
  return g;
}

// ---------------------------------------------------------------------------
// sigmoid and its clamped inverse

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double clamp_unit(double p, double eps = kLogitClamp) { return std::clamp(p, eps, 1.0 - eps); }

inline double sigmoid_inverse(double p, double eps = kLogitClamp) {
  const double c = clamp_unit(p, eps);
  return std::log(c / (1.0 - c));
}

// sigma(sigma^-1(p) + delta), written so that delta == 0 returns the clamped p exactly.
inline double refine_in_logit_space(double p, double delta, double eps = kLogitClamp) {
  const double c = clamp_unit(p, eps);
  const double e = std::expm1(delta);
  return c + c * (1.0 - c) * e / (1.0 + c * e);
}

// ---------------------------------------------------------------------------
// bilinear sampling of an [rows x cols x d] map at continuous pixel coords.
// Corners outside the map read as zero; a sample with no corner inside is zero.

struct MapView {
  const double* data;
  std::size_t rows, cols, channels;
  std::size_t stride = 0;  // distance between consecutive pixels; 0 means `channels`
  std::size_t pixel_stride() const { return stride ? stride : channels; }
};

struct BilinearCorners {
  long r0, c0;
  double fr, fc;
};

inline BilinearCorners bilinear_corners(double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  return {static_cast<long>(fu), static_cast<long>(fv), u - fu, v - fv};
}

// out[k] += scale * F(u, v)[k]
inline void bilinear_accumulate(const MapView& map, double u, double v, double scale, double* out) {
  if (!(u > -1.0 && v > -1.0 && u < static_cast<double>(map.rows) && v < static_cast<double>(map.cols)))
    return;
  const auto bc = bilinear_corners(u, v);
  const long R = static_cast<long>(map.rows), C = static_cast<long>(map.cols);
  const double w[4] = {(1 - bc.fr) * (1 - bc.fc), (1 - bc.fr) * bc.fc, bc.fr * (1 - bc.fc), bc.fr * bc.fc};
  const long rr[4] = {bc.r0, bc.r0, bc.r0 + 1, bc.r0 + 1};
  const long cc[4] = {bc.c0, bc.c0 + 1, bc.c0, bc.c0 + 1};
  const std::size_t ps = map.pixel_stride();
  for (int k = 0; k < 4; ++k) {
    if (rr[k] < 0 || cc[k] < 0 || rr[k] >= R || cc[k] >= C || w[k] == 0.0) continue;
    const double* px = map.data + (static_cast<std::size_t>(rr[k]) * map.cols + static_cast<std::size_t>(cc[k])) * ps;
    const double s = scale * w[k];
    for (std::size_t j = 0; j < map.channels; ++j) out[j] += s * px[j];
  }
}

// Backward of bilinear_accumulate for a given upstream gradient `gout` (channels long).
// Adds into dmap (same layout as map), and returns d/du, d/dv of <gout, scale * F(u,v)>,
// plus d/dscale = <gout, F(u,v)>.
struct BilinearBackward {
  double du = 0.0, dv = 0.0, dscale = 0.0;
};

inline BilinearBackward bilinear_accumulate_backward(const MapView& map, double u, double v, double scale,
                                                     const double* gout, double* dmap) {
  BilinearBackward r;
  if (!(u > -1.0 && v > -1.0 && u < static_cast<double>(map.rows) && v < static_cast<double>(map.cols)))
    return r;
  const auto bc = bilinear_corners(u, v);
  const long R = static_cast<long>(map.rows), C = static_cast<long>(map.cols);
  const double w[4] = {(1 - bc.fr) * (1 - bc.fc), (1 - bc.fr) * bc.fc, bc.fr * (1 - bc.fc), bc.fr * bc.fc};
  // d w / d fr and d w / d fc
  const double dwr[4] = {-(1 - bc.fc), -bc.fc, (1 - bc.fc), bc.fc};
  const double dwc[4] = {-(1 - bc.fr), (1 - bc.fr), -bc.fr, bc.fr};
  const long rr[4] = {bc.r0, bc.r0, bc.r0 + 1, bc.r0 + 1};
  const long cc[4] = {bc.c0, bc.c0 + 1, bc.c0, bc.c0 + 1};
  const std::size_t ps = map.pixel_stride();
  for (int k = 0; k < 4; ++k) {
    if (rr[k] < 0 || cc[k] < 0 || rr[k] >= R || cc[k] >= C) continue;
    const std::size_t off = (static_cast<std::size_t>(rr[k]) * map.cols + static_cast<std::size_t>(cc[k])) * ps;
    const double* px = map.data + off;
    double dot = 0.0;
    for (std::size_t j = 0; j < map.channels; ++j) dot += gout[j] * px[j];
    r.dscale += w[k] * dot;
    r.du += scale * dwr[k] * dot;
    r.dv += scale * dwc[k] * dot;
    if (dmap && w[k] != 0.0) {
      double* dpx = dmap + off;
      const double s = scale * w[k];
      for (std::size_t j = 0; j < map.channels; ++j) dpx[j] += s * gout[j];
    }
  }
  return r;
}

// Single-point sample of an [rows x cols x d] tensor.
inline Tensor bilinear_sample(const Tensor& map, double u, double v) {
  require(map.ndim() == 3, "bilinear_sample: expected [rows x cols x d] map");
  Tensor out(Shape{map.dim(2)});
  bilinear_accumulate({map.data(), map.dim(0), map.dim(1), map.dim(2)}, u, v, 1.0, out.data());
  return out;
}

struct BilinearSampleGrads {
  Tensor dmap;
  double du = 0.0, dv = 0.0;
};

inline BilinearSampleGrads bilinear_sample_backward(const Tensor& map, double u, double v, const Tensor& dout) {
  BilinearSampleGrads g{Tensor(map.shape())};
  const auto r = bilinear_accumulate_backward({map.data(), map.dim(0), map.dim(1), map.dim(2)}, u, v, 1.0,
                                              dout.data(), g.dmap.data());
  g.du = r.du;
  g.dv = r.dv;
  return g;
}

// ---------------------------------------------------------------------------
// two-layer feed-forward block: affine -> ReLU -> affine

struct FfnWeights {
  Tensor w1, b1, w2, b2;
};

inline Tensor ffn_forward(const Tensor& x, const FfnWeights& p, Tensor* hidden = nullptr) {
  Tensor h = affine_forward(x, p.w1, p.b1);
  for (auto& v : h.values()) v = std::max(v, 0.0);
  Tensor y = affine_forward(h, p.w2, p.b2);
  if (hidden) *hidden = std::move(h);
  return y;
}

struct FfnGrads {
  Tensor dx;
  FfnWeights dparams;
};

inline FfnGrads ffn_backward(const Tensor& x, const FfnWeights& p, const Tensor& hidden, const Tensor& dy) {
  auto g2 = affine_backward(hidden, p.w2, dy);
  Tensor dh = std::move(g2.dx);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (hidden[i] <= 0.0) dh[i] = 0.0;
  auto g1 = affine_backward(x, p.w1, dh);
  return {std::move(g1.dx), {std::move(g1.dw), std::move(g1.db), std::move(g2.dw), std::move(g2.db)}};
}

}  // namespace raptr::kernels
