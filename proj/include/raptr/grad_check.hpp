// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "raptr/param_store.hpp"
#include "raptr/rng.hpp"
#include "raptr/tape.hpp"

namespace raptr {

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates probed per checked tensor; 0 probes every coordinate.
  std::size_t samples_per_tensor = 0;
  // Total coordinates probed across all tensors; 0 means no cap.
  std::size_t max_total = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // "<tensor>[index]" of the worst coordinate
};

class GradCheckAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double finite_scalar(const Tensor& t, const std::string& where) {
  require(t.size() == 1, "grad_check: function must return a scalar");
  if (!std::isfinite(t[0])) throw GradCheckAborted("grad_check: non-finite loss " + where);
  return t[0];
}

inline std::vector<std::size_t> probe_indices(std::size_t n, std::size_t samples, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (samples == 0 || samples >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(samples);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace detail

/// Central-difference check of a scalar function of explicit input tensors.
///
/// `f` receives one Var per entry of `inputs` (recorded as trainable leaves)
/// and returns a scalar Var.
inline GradCheckResult grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                                  std::vector<Tensor> inputs, const GradCheckOptions& opt = {}) {
  auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    Var y = f(tape, vars);
    const double v = detail::finite_scalar(y.value(), "at the probe point");
    if (grads) {
      tape.backward(y);
      grads->clear();
      for (const Var& x : vars)
        grads->push_back(tape.has_grad(x.id) ? tape.grad(x) : Tensor(x.value().shape()));
    }
    return v;
  };

  std::vector<Tensor> analytic;
  evaluate(inputs, &analytic);

  GradCheckResult res;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : detail::probe_indices(inputs[k].size(), opt.samples_per_tensor, rng)) {
      if (opt.max_total && res.probes >= opt.max_total) return res;
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.eps;
      const double fp = evaluate(inputs, nullptr);
      inputs[k][i] = orig - opt.eps;
      const double fm = evaluate(inputs, nullptr);
      inputs[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double err = detail::rel_error(analytic[k][i], numeric);
      ++res.probes;
      if (err >= res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

/// Central-difference check of a scalar function of the parameters in `store`.
///
/// Probes `opt.max_total` coordinates drawn uniformly over all parameter
/// elements (all of them when max_total is 0).
inline GradCheckResult grad_check_params(const std::function<Var(Tape&, ParamStore&)>& f, ParamStore& store,
                                         const GradCheckOptions& opt = {}) {
  store.zero_grad();
  {
    Tape tape;
    Var y = f(tape, store);
    detail::finite_scalar(y.value(), "at the probe point");
    tape.backward(y);
    tape.flush_param_grads();
  }
  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& [name, e] : store.entries())
    for (std::size_t i = 0; i < e.value.size(); ++i) coords.push_back({name, i});
  Rng rng(opt.seed);
  if (opt.max_total && opt.max_total < coords.size()) {
    std::shuffle(coords.begin(), coords.end(), rng.engine());
    coords.resize(opt.max_total);
  }

  auto eval = [&]() {
    Tape tape;
    return detail::finite_scalar(f(tape, store).value(), "under perturbation");
  };

  GradCheckResult res;
  for (const auto& c : coords) {
    double& p = store.value(c.name)[c.index];
    const double orig = p;
    p = orig + opt.eps;
    const double fp = eval();
    p = orig - opt.eps;
    const double fm = eval();
    p = orig;
    const double numeric = (fp - fm) / (2.0 * opt.eps);
    const double err = detail::rel_error(store.grad(c.name)[c.index], numeric);
    ++res.probes;
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = c.name + "[" + std::to_string(c.index) + "]";
    }
  }
  return res;
}

}  // namespace raptr
