// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <string>

#include "dolg/error.hpp"

namespace dolg {

/// Linear warmup from 0 to base_lr over `warmup_steps`, then cosine decay to 0
/// at the final step. The ramp reaches base_lr exactly at the first cosine
/// step, so the two pieces meet without a jump beyond one ramp increment.
inline double lr_at(long step, long total_steps, long warmup_steps, double base_lr) {
  if (total_steps <= 0) throw config_error("lr_at: total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw config_error("lr_at: warmup_steps must lie in [0, total_steps)");
  if (step < 0 || step >= total_steps)
    throw index_error("lr_at: step " + std::to_string(step) + " outside [0," +
                      std::to_string(total_steps) + ")");
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const long span = total_steps - 1 - warmup_steps;
  const double u = span > 0 ? static_cast<double>(step - warmup_steps) / static_cast<double>(span) : 1.0;
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
}

}  // namespace dolg
