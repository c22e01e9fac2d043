// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "raptr/error.hpp"
#include "raptr/tensor.hpp"

namespace raptr {

/// Paired radar heatmaps: horizontal [T x W x D] (x, z) and vertical [T x H x D] (y, z).
struct RadarFrameStack {
  Tensor hor, ver;

  std::size_t frames() const { return hor.dim(0); }
  std::size_t width() const { return hor.dim(1); }
  std::size_t height() const { return ver.dim(1); }
  std::size_t depth() const { return hor.dim(2); }

  void validate() const {
    require(hor.ndim() == 3 && ver.ndim() == 3, "RadarFrameStack: views must be [T x rows x D]");
    require(hor.dim(0) == ver.dim(0) && hor.dim(2) == ver.dim(2),
            "RadarFrameStack: views disagree on frame count or depth bins");
  }

  /// One view as [(rows * D) x T], the channel-last layout the backbone consumes.
  static Tensor channels_last(const Tensor& view) {
    const std::size_t T = view.dim(0), R = view.dim(1), D = view.dim(2);
    Tensor out(Shape{R * D, T});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < R * D; ++i) out(i, t) = view[t * R * D + i];
    return out;
  }
};

}  // namespace raptr
