// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Umbrella header for the library. raptr/suites.hpp (acceptance checks) also needs fmt and is not included.

#pragma once

#include "raptr/attention.hpp"
#include "raptr/complexity.hpp"
#include "raptr/deform.hpp"
#include "raptr/error.hpp"
#include "raptr/geometry.hpp"
#include "raptr/grad_check.hpp"
#include "raptr/harness.hpp"
#include "raptr/hungarian.hpp"
#include "raptr/kernels.hpp"
#include "raptr/match_loss.hpp"
#include "raptr/metrics.hpp"
#include "raptr/model.hpp"
#include "raptr/ops.hpp"
#include "raptr/param_store.hpp"
#include "raptr/radar_frames.hpp"
#include "raptr/rng.hpp"
#include "raptr/self_attention.hpp"
#include "raptr/skeleton.hpp"
#include "raptr/synthdata.hpp"
#include "raptr/tape.hpp"
#include "raptr/tensor.hpp"
#include "raptr/view_mask.hpp"
