// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "raptr/error.hpp"
#include "raptr/tensor.hpp"

namespace raptr {

/// Named learnable tensors with paired gradient accumulators.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init) {
    require(!entries_.contains(name), "ParamStore: duplicate parameter '" + name + "'");
    Tensor g(init.shape());
    auto [it, _] = entries_.emplace(name, Entry{std::move(init), std::move(g)});
    return it->second.value;
  }

  bool contains(const std::string& name) const { return entries_.contains(name); }

  Tensor& value(const std::string& name) { return at(name).value; }
  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& grad(const std::string& name) { return at(name).grad; }
  const Tensor& grad(const std::string& name) const { return at(name).grad; }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.fill(0.0);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& [_, e] : entries_)
      for (double g : e.grad.values()) s += g * g;
    return std::sqrt(s);
  }

  /// Element-wise equality of every value (names and shapes included).
  bool same_values(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (const auto& [n, e] : entries_) {
      auto it = o.entries_.find(n);
      if (it == o.entries_.end() || !(it->second.value == e.value)) return false;
    }
    return true;
  }

  // Binary layout (all integers little-endian):
  //   magic "RPTRPRM\0" (8 bytes), u32 version, u64 count,
  //   per entry: u32 name_len, name bytes, u32 ndim, u64 extents[ndim], f64 values[numel].
  static constexpr char kMagic[8] = {'R', 'P', 'T', 'R', 'P', 'R', 'M', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "ParamStore::save: cannot open " + path);
    os.write(kMagic, 8);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, entries_.size());
    for (const auto& [name, e] : entries_) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.ndim()));
      for (std::size_t d : e.value.shape()) put<std::uint64_t>(os, d);
      for (double v : e.value.values()) put<double>(os, v);
    }
    require(bool(os), "ParamStore::save: write failed for " + path);
  }

  static ParamStore load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), "ParamStore::load: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    require(is && std::memcmp(magic, kMagic, 8) == 0, "ParamStore::load: bad magic in " + path);
    const auto version = get<std::uint32_t>(is);
    require(version == kVersion, "ParamStore::load: unsupported version " + std::to_string(version));
    const auto count = get<std::uint64_t>(is);
    ParamStore ps;
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto len = get<std::uint32_t>(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      const auto ndim = get<std::uint32_t>(is);
      Shape shape(ndim);
      for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
      Tensor t(shape);
      for (auto& v : t.values()) v = get<double>(is);
      require(bool(is), "ParamStore::load: truncated file " + path);
      ps.add(name, std::move(t));
    }
    return ps;
  }

 private:
  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }

  template <class T>
  static void put(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }
  template <class T>
  static T get(std::istream& is) {
    unsigned char buf[sizeof(T)] = {};
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace raptr
