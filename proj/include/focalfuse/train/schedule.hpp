// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "focalfuse/tensor/errors.hpp"

namespace focalfuse::train {

inline constexpr double kLrMin = 0.0005;
inline constexpr double kLrMax = 0.003;

/// Triangular cyclic learning rate: linear ramp lr_min -> lr_max over
/// half_cycle iterations, then back down; period 2 * half_cycle.
inline double cyclic_lr(std::int64_t iteration, double lr_min = kLrMin, double lr_max = kLrMax,
                        std::int64_t half_cycle = 100) {
  if (half_cycle < 1) throw ConfigError("cyclic_lr: half_cycle must be at least 1");
  if (iteration < 0) throw ConfigError("cyclic_lr: iteration must be non-negative");
  const std::int64_t phase = iteration % (2 * half_cycle);
  const std::int64_t up = phase <= half_cycle ? phase : 2 * half_cycle - phase;
  if (up == 0) return lr_min;
  if (up == half_cycle) return lr_max;
  return lr_min + (lr_max - lr_min) * static_cast<double>(up) / static_cast<double>(half_cycle);
}

}  // namespace focalfuse::train
