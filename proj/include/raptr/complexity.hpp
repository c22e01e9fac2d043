// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Symbolic operation counts for decoupled-2D vs pseudo-3D deformable attention.
// Costs are integers in units of N*d (N queries, d feature width).

#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/error.hpp"

namespace raptr {

enum class Mechanism { decoupled2d, pseudo3d };

inline const char* mechanism_name(Mechanism m) { return m == Mechanism::pseudo3d ? "pseudo3d" : "decoupled2d"; }

struct Rational {
  std::uint64_t num = 0, den = 1;

  static Rational make(std::uint64_t n, std::uint64_t d) {
    require(d != 0, "Rational: zero denominator");
    const auto g = std::gcd(n, d);
    return {n / (g ? g : 1), d / (g ? g : 1)};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Rational&, const Rational&) = default;
};

// num/den in fixed notation with `decimals` digits, rounded half up.
inline std::string format_fixed(Rational r, int decimals) {
  std::uint64_t scale = 1;
  for (int i = 0; i < decimals; ++i) scale *= 10;
  const std::uint64_t scaled = (2 * r.num * scale + r.den) / (2 * r.den);
  std::string s = std::to_string(scaled / scale);
  if (decimals > 0) {
    std::string frac = std::to_string(scaled % scale);
    s += "." + std::string(static_cast<std::size_t>(decimals) - frac.size(), '0') + frac;
  }
  return s;
}

// num/den with `sig` significant digits (value in (0, 1000)), rounded half up.
inline std::string format_significant(Rational r, int sig) {
  if (r.num == 0) return "0";
  int int_digits = 0;
  for (std::uint64_t q = r.num / r.den; q > 0; q /= 10) ++int_digits;
  if (int_digits == 0) {
    // leading zeros after the point
    int z = 0;
    std::uint64_t n = r.num * 10;
    while (n < r.den) {
      n *= 10;
      ++z;
    }
    return format_fixed(r, z + sig);
  }
  return format_fixed(r, std::max(0, sig - int_digits));
}

struct CostItem {
  std::string name;
  std::uint64_t units = 0;  // multiples of N*d
  bool counted = true;
};

struct ComplexityReport {
  Mechanism mechanism = Mechanism::pseudo3d;
  std::uint64_t queries = 0, views = 0, offsets = 0, width = 0;
  std::vector<CostItem> breakdown;
  std::uint64_t total_units = 0;  // sum of counted items
  std::uint64_t baseline_units = 0;
  Rational ratio;    // total / decoupled-2D total
  Rational savings;  // 1 - ratio

  std::uint64_t total_ops() const { return total_units * queries * width; }
};

/// Counts per mechanism, in units of N*d:
///   decoupled 2D: offsets 2 V N_off, weights V N_off, aggregation 5 V N_off
///   pseudo-3D:    offsets 3 N_off,   weights V N_off, aggregation 5 V N_off
/// The 6 V N_off per-view projection of the 3D samples is listed but not counted.
inline ComplexityReport count_ops(Mechanism mech, std::uint64_t queries, std::uint64_t views, std::uint64_t offsets,
                                  std::uint64_t width = 1) {
  require(queries > 0 && views > 0 && offsets > 0 && width > 0, "count_ops: arguments must be positive integers");
  ComplexityReport r;
  r.mechanism = mech;
  r.queries = queries;
  r.views = views;
  r.offsets = offsets;
  r.width = width;
  const std::uint64_t V = views, K = offsets;
  if (mech == Mechanism::decoupled2d) {
    r.breakdown = {{"offset_estimation", 2 * V * K}, {"attention_weights", V * K}, {"aggregation", 5 * V * K}};
  } else {
    r.breakdown = {{"offset_estimation", 3 * K},
                   {"attention_weights", V * K},
                   {"aggregation", 5 * V * K},
                   {"projection", 6 * V * K, false}};
  }
  for (const auto& c : r.breakdown)
    if (c.counted) r.total_units += c.units;
  r.baseline_units = 8 * V * K;
  r.ratio = Rational::make(r.total_units, r.baseline_units);
  r.savings = Rational::make(r.baseline_units - r.total_units, r.baseline_units);
  return r;
}

inline nlohmann::json to_json(const ComplexityReport& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& c : r.breakdown) items.push_back({{"name", c.name}, {"units_Nd", c.units}, {"counted", c.counted}});
  return {{"mechanism", mechanism_name(r.mechanism)},
          {"queries", r.queries},
          {"views", r.views},
          {"offsets", r.offsets},
          {"width", r.width},
          {"units_Nd", r.total_units},
          {"total_ops", r.total_ops()},
          {"breakdown", items},
          {"ratio_vs_decoupled2d", {{"num", r.ratio.num}, {"den", r.ratio.den}, {"value", r.ratio.value()}}},
          {"savings", {{"num", r.savings.num}, {"den", r.savings.den}, {"value", r.savings.value()}}}};
}

struct ComplexityRow {
  std::uint64_t queries, views, offsets;
  std::uint64_t units_2d, units_3d;
  Rational ratio, savings;
};

inline ComplexityRow compare_mechanisms(std::uint64_t queries, std::uint64_t views, std::uint64_t offsets) {
  const auto a = count_ops(Mechanism::decoupled2d, queries, views, offsets);
  const auto b = count_ops(Mechanism::pseudo3d, queries, views, offsets);
  return {queries, views, offsets, a.total_units, b.total_units, b.ratio, b.savings};
}

inline std::string ratio_display(const ComplexityRow& r) { return format_fixed(r.ratio, 2); }
inline std::string savings_display(const ComplexityRow& r) {
  return format_significant(Rational::make(r.savings.num * 100, r.savings.den), 3) + "%";
}

/// Aligned text table: Queries, Views, 2D, Pseudo-3D, Ratio, Savings.
inline std::string complexity_table(const std::vector<ComplexityRow>& rows) {
  std::vector<std::vector<std::string>> cells = {{"Queries", "Views", "2D", "Pseudo-3D", "Ratio", "Savings"}};
  for (const auto& r : rows)
    cells.push_back({std::to_string(r.queries), std::to_string(r.views), std::to_string(r.units_2d) + " N d",
                     std::to_string(r.units_3d) + " N d", ratio_display(r), savings_display(r)});
  std::vector<std::size_t> w(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], row[c].size());
  std::ostringstream os;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      if (c) os << "  ";
      os << std::string(w[c] - cells[i][c].size(), ' ') << cells[i][c];
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto x : w) total += x;
      os << std::string(total + 2 * (w.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

inline nlohmann::json to_json(const ComplexityRow& r) {
  return {{"queries", r.queries},
          {"views", r.views},
          {"offsets", r.offsets},
          {"decoupled2d_units_Nd", r.units_2d},
          {"pseudo3d_units_Nd", r.units_3d},
          {"ratio", {{"num", r.ratio.num}, {"den", r.ratio.den}, {"display", ratio_display(r)}}},
          {"savings", {{"num", r.savings.num}, {"den", r.savings.den}, {"display", savings_display(r)}}}};
}

}  // namespace raptr
