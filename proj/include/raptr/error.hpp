// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace raptr {

// Caller broke a documented precondition (shape mismatch, non-finite input).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Inconsistent model or scene configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

inline void require_config(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace raptr
