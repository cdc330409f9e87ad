// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "flowguide/gmm.hpp"

namespace flowguide {

enum class Strategy { kConditional, kCfg, kCfgScale, kCfgZeroInit, kCfgZeroStar };

/// "conditional", "cfg", "cfg-scale", "cfg-zero-init", "cfg-zero-star".
std::string_view to_string(Strategy strategy);
/// Throws ConfigError for an unknown name.
Strategy parse_strategy(std::string_view name);

struct GuidanceSpec {
  Strategy strategy = Strategy::kCfgZeroStar;
  double omega = 1.0;
  std::size_t zero_init_steps = 1;
  double epsilon = 1e-8;

  /// omega >= 1, epsilon > 0, and zero_init_steps <= solver_steps when given.
  void validate(std::size_t solver_steps = 0) const;
  bool uses_optimized_scale() const {
    return strategy == Strategy::kCfgScale || strategy == Strategy::kCfgZeroStar;
  }
  bool uses_zero_init() const {
    return strategy == Strategy::kCfgZeroInit || strategy == Strategy::kCfgZeroStar;
  }
  /// Number of leading solver steps whose velocity is forced to zero.
  std::size_t gated_steps() const { return uses_zero_init() ? zero_init_steps : 0; }
  bool operator==(const GuidanceSpec&) const = default;
};

/// {"strategy": ..., "omega": ..., "zero_init_steps": ..., "epsilon": ...}
std::string to_json(const GuidanceSpec& spec);
GuidanceSpec guidance_from_json(std::string_view text);

/// Least-squares s minimizing ||v_cond - s v_uncond||^2 with a guarded
/// denominator: v_cond . v_uncond / (||v_uncond||^2 + epsilon).
double optimized_scale(const Vec& v_cond, const Vec& v_uncond, double epsilon = 1e-8);
/// Per-column scales for d x N batches.
Eigen::RowVectorXd optimized_scale(const Batch& v_cond, const Batch& v_uncond,
                                   double epsilon = 1e-8);

/// ||v_cond - s v_uncond||^2.
double scale_objective(const Vec& v_cond, const Vec& v_uncond, double s);

/// Guided velocity (1 - omega) s v_uncond + omega v_cond, where s is 1 for
/// CFG and the optimized scale for the scale strategies. Zero-init
/// strategies return zero while step_index < zero_init_steps. CONDITIONAL,
/// and any strategy with omega == 1, return v_cond unchanged.
Vec guided_velocity(const GuidanceSpec& spec, const Vec& v_cond, const Vec& v_uncond,
                    std::size_t step_index);
Batch guided_velocity(const GuidanceSpec& spec, const Batch& v_cond, const Batch& v_uncond,
                      std::size_t step_index);

}  // namespace flowguide
