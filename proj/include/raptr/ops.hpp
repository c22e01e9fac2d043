// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable tensor ops recorded on a Tape.

#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "raptr/kernels.hpp"
#include "raptr/tape.hpp"

namespace raptr::ops {

namespace detail {

inline Tape& tape_of(Var a) {
  require(a.tape != nullptr, "op on an unbound Var");
  return *a.tape;
}

inline void same_size(Var a, Var b, const char* op) {
  require(a.tape == b.tape, std::string(op) + ": operands on different tapes");
  require(a.value().size() == b.value().size(),
          std::string(op) + ": size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F>
Var unary(Var a, Tensor out, F dfdx) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.record(std::move(out), {a}, [ia, dfdx](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(ia)) return;
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    const Tensor& gy = tp.grad(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_size(a, b, "add");
  Tensor out = a.value();
  out.add_inplace(b.value());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_size(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    t.accumulate(ia, g);
    for (auto& v : g.values()) v = -v;
    t.accumulate(ib, g);
  });
}

inline Var mul(Var a, Var b) {
  detail::same_size(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& vb = t.value(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& va = t.value(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * va[i];
    }
  });
}

inline Var div(Var a, Var b) {
  detail::same_size(a, b, "div");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& vb = t.value(ib);
    const Tensor& y = t.value(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / vb[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i] * y[i] / vb[i];
    }
  });
}

// x[rows x m] + b[m] broadcast over rows
inline Var add_bias(Var x, Var b) {
  const std::size_t m = x.value().cols();
  require(b.value().size() == m, "add_bias: bias length mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += b.value()[j];
  const std::size_t ix = x.id, ib = b.id;
  return x.tape->record(std::move(out), {x, b}, [ix, ib, m](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    t.accumulate(ix, gy);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % m] += gy[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= c;
  return detail::unary(a, std::move(out), [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += c;
  return detail::unary(a, std::move(out), [](double, double) { return 1.0; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::max(v, 0.0);
  return detail::unary(a, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = kernels::sigmoid(v);
  return detail::unary(a, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

// sigma^-1 of the input clamped to [eps, 1 - eps]; zero gradient where the clamp engages.
inline Var sigmoid_inverse(Var p, double eps = kernels::kLogitClamp) {
  Tensor out = p.value();
  for (auto& v : out.values()) v = kernels::sigmoid_inverse(v, eps);
  return detail::unary(p, std::move(out), [eps](double x, double) {
    if (x < eps || x > 1.0 - eps) return 0.0;
    return 1.0 / (x * (1.0 - x));
  });
}

inline Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return detail::unary(a, std::move(out), [](double, double y) { return y; });
}

inline Var log(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::log(v);
  return detail::unary(a, std::move(out), [](double x, double) { return 1.0 / x; });
}

inline Var square(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v * v;
  return detail::unary(a, std::move(out), [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::sqrt(v);
  return detail::unary(a, std::move(out), [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ia).values()) v += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// Per-row Euclidean norm of x[rows x m] -> [rows]; the gradient at a zero row is zero.
inline Var norm_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += xv(i, j) * xv(i, j);
    out[i] = std::sqrt(s);
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, m](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const Tensor& xv = t.value(ix);
    const Tensor& y = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += gy[i] * xv[i * m + j] / y[i];
    }
  });
}

// Column means of x[rows x m] -> [1 x m].
inline Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  require(n > 0, "mean_rows: empty input");
  Tensor out(Shape{1, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += xv(i, j);
  for (auto& v : out.values()) v /= static_cast<double>(n);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, n, m](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += gy[j] / static_cast<double>(n);
  });
}

inline Var matmul(Var a, Var b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).add_inplace(kernels::matmul_a_bt(gy, t.value(ib)));
    if (t.requires_grad(ib)) t.grad(ib).add_inplace(kernels::matmul_at_b(t.value(ia), gy));
  });
}

// a[n x k] * b[m x k]^T -> [n x m]
inline Var matmul_bt(Var a, Var b) {
  Tensor out = kernels::matmul_a_bt(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).add_inplace(kernels::matmul(gy, t.value(ib)));
    if (t.requires_grad(ib)) t.grad(ib).add_inplace(kernels::matmul_at_b(gy, t.value(ia)));
  });
}

inline Var affine(Var x, Var w, Var b) {
  require(x.value().cols() == w.value().rows(),
          "affine: input width " + std::to_string(x.value().cols()) + " vs weight " + shape_str(w.shape()));
  Tensor out = kernels::affine_forward(x.value(), w.value(), b.value());
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  return x.tape->record(std::move(out), {x, w, b}, [ix, iw, ib](Tape& t, std::size_t self) {
    auto g = kernels::affine_backward(t.value(ix), t.value(iw), t.grad(self));
    t.accumulate(ix, g.dx);
    t.accumulate(iw, g.dw);
    t.accumulate(ib, g.db);
  });
}

inline Var softmax(Var x, std::size_t group) {
  Tensor out = kernels::softmax_forward(x.value(), group);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, group](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    t.grad(ix).add_inplace(kernels::softmax_backward(t.value(self), t.grad(self), group));
  });
}

inline Var layer_norm(Var x, Var gain, Var bias) {
  auto cache = std::make_shared<kernels::LayerNormCache>();
  Tensor out = kernels::layer_norm_forward(x.value(), gain.value(), bias.value(), cache.get());
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(std::move(out), {x, gain, bias}, [ix, ig, ib, cache](Tape& t, std::size_t self) {
    auto g = kernels::layer_norm_backward(*cache, t.value(ig), t.grad(self));
    t.accumulate(ix, g.dx);
    t.accumulate(ig, g.dgain);
    t.accumulate(ib, g.dbias);
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    const Tensor& gy = t.grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = xv(i, j);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, n, m](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    const Tensor& gy = t.grad(self);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += gy[j * n + i];
  });
}

// Columns [c0, c1) of x[rows x m].
inline Var slice_cols(Var x, std::size_t c0, std::size_t c1) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  require(c0 <= c1 && c1 <= m, "slice_cols: range out of bounds");
  const std::size_t w = c1 - c0;
  Tensor out(Shape{n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, c0 + j);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, n, m, c0, w](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    const Tensor& gy = t.grad(self);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * m + c0 + j] += gy[i * w + j];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.value().rows() == n, "concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out(Shape{n, total});
  std::size_t c = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out(i, c + j) = pv(i, j);
    c += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return parts[0].tape->record(std::move(out), parts, [ids, widths, n, total](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    std::size_t c = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& gx = t.grad(ids[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gx[i * widths[k] + j] += gy[i * total + c + j];
      }
      c += widths[k];
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t m = parts[0].value().cols();
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  std::vector<double> data;
  for (const Var& p : parts) {
    require(p.value().cols() == m, "concat_rows: column count mismatch");
    sizes.push_back(p.value().size());
    rows += p.value().rows();
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return parts[0].tape->record(Tensor(Shape{rows, m}, std::move(data)), parts,
                               [ids, sizes](Tape& t, std::size_t self) {
                                 const Tensor& gy = t.grad(self);
                                 std::size_t off = 0;
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   if (t.requires_grad(ids[k])) {
                                     Tensor& gx = t.grad(ids[k]);
                                     for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += gy[off + i];
                                   }
                                   off += sizes[k];
                                 }
                               });
}

// out[i] = x[index[i]] (row gather); repeated indices accumulate in backward.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.cols();
  Tensor out(Shape{index.size(), m});
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < xv.rows(), "gather_rows: index out of range");
    for (std::size_t j = 0; j < m; ++j) out(i, j) = xv(index[i], j);
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, m, index = std::move(index)](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    const Tensor& gy = t.grad(self);
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) gx[index[i] * m + j] += gy[i * m + j];
  });
}

inline Var slice_rows(Var x, std::size_t r0, std::size_t r1) {
  std::vector<std::size_t> idx;
  for (std::size_t r = r0; r < r1; ++r) idx.push_back(r);
  return gather_rows(x, std::move(idx));
}

// sigma(sigma^-1(p) + delta) element-wise; exact identity at delta == 0.
inline Var refine(Var p, Var delta, double eps = kernels::kLogitClamp) {
  detail::same_size(p, delta, "refine");
  Tensor out(p.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = kernels::refine_in_logit_space(p.value()[i], delta.value()[i], eps);
  const std::size_t ip = p.id, id = delta.id;
  return p.tape->record(std::move(out), {p, delta}, [ip, id, eps](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& gy = t.grad(self);
    const Tensor& pv = t.value(ip);
    const bool gp = t.requires_grad(ip), gd = t.requires_grad(id);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double s = y[i] * (1.0 - y[i]) * gy[i];
      if (gd) t.grad(id)[i] += s;
      if (gp && pv[i] >= eps && pv[i] <= 1.0 - eps) t.grad(ip)[i] += s / (pv[i] * (1.0 - pv[i]));
    }
  });
}

inline Var ffn(Var x, Var w1, Var b1, Var w2, Var b2) { return affine(relu(affine(x, w1, b1)), w2, b2); }

// 3x3 stride-2 patches with zero padding 1 of x[(H*W) x C] -> [(Ho*Wo) x 9C], Ho = ceil(H/2).
inline Var im2col_3x3_s2(Var x, std::size_t h, std::size_t w) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  require(xv.rows() == h * w, "im2col: row count does not match extents");
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor out(Shape{ho * wo, 9 * c});
  auto src = [=](std::size_t oy, std::size_t ox, int ky, int kx) -> long {
    const long y = static_cast<long>(2 * oy) + ky - 1, xx = static_cast<long>(2 * ox) + kx - 1;
    if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(w)) return -1;
    return y * static_cast<long>(w) + xx;
  };
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (int k = 0; k < 9; ++k) {
        const long s = src(oy, ox, k / 3, k % 3);
        if (s < 0) continue;
        for (std::size_t j = 0; j < c; ++j) out(oy * wo + ox, k * c + j) = xv(static_cast<std::size_t>(s), j);
      }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, ho, wo, c, src](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    const Tensor& gy = t.grad(self);
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (int k = 0; k < 9; ++k) {
          const long s = src(oy, ox, k / 3, k % 3);
          if (s < 0) continue;
          for (std::size_t j = 0; j < c; ++j)
            gx[static_cast<std::size_t>(s) * c + j] += gy[(oy * wo + ox) * 9 * c + k * c + j];
        }
  });
}

}  // namespace raptr::ops
