// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Minimum-cost bipartite assignment (shortest augmenting paths with potentials, O(n^2 m)).

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "raptr/error.hpp"
#include "raptr/tensor.hpp"

namespace raptr {

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, label), sorted by prediction
  double cost = 0.0;
  std::vector<std::size_t> unmatched;  // prediction indices without a label
};

namespace detail {

// rows <= cols; returns the column assigned to every row.
inline std::vector<std::size_t> assign_rows(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size(), m = a.empty() ? 0 : a[0].size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j]) col[p[j] - 1] = j - 1;
  return col;
}

}  // namespace detail

/// Optimal assignment of min(n, m) pairs for an [n x m] cost matrix (rows = predictions).
inline MatchResult hungarian(const Tensor& cost) {
  require(cost.ndim() == 2, "hungarian: cost must be a matrix");
  const std::size_t n = cost.dim(0), m = cost.dim(1);
  for (double c : cost.values()) require(std::isfinite(c), "hungarian: non-finite cost entry");
  MatchResult r;
  if (n == 0 || m == 0) {
    for (std::size_t i = 0; i < n; ++i) r.unmatched.push_back(i);
    return r;
  }
  const bool flip = n > m;
  const std::size_t R = flip ? m : n, C = flip ? n : m;
  std::vector<std::vector<double>> a(R, std::vector<double>(C));
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) a[i][j] = flip ? cost(j, i) : cost(i, j);
  const auto col = detail::assign_rows(a);
  std::vector<char> matched(n, 0);
  for (std::size_t i = 0; i < R; ++i) {
    const std::size_t pred = flip ? col[i] : i, label = flip ? i : col[i];
    r.pairs.emplace_back(pred, label);
    matched[pred] = 1;
  }
  std::sort(r.pairs.begin(), r.pairs.end());
  for (const auto& [p, l] : r.pairs) r.cost += cost(p, l);
  for (std::size_t i = 0; i < n; ++i)
    if (!matched[i]) r.unmatched.push_back(i);
  return r;
}

}  // namespace raptr
