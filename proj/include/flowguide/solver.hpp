// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "flowguide/gmm.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/velocity_source.hpp"

namespace flowguide {

/// Uniform nodes t_i = i / T, i = 0..T.
class TimeGrid {
 public:
  /// Throws ConfigError when steps == 0.
  explicit TimeGrid(std::size_t steps);
  std::size_t steps() const { return steps_; }
  double node(std::size_t i) const {
    return static_cast<double>(i) / static_cast<double>(steps_);
  }
  double step_size(std::size_t i) const { return node(i + 1) - node(i); }

 private:
  std::size_t steps_;
};

enum class Method { kEuler, kMidpoint };
std::string_view to_string(Method method);
Method parse_method(std::string_view name);

/// Velocity as a function of (x, t).
using Field = std::function<Batch(const Batch&, double)>;

/// x + h v(x, t). Throws DivergedError(step_index) on a non-finite velocity.
Batch euler_step(const Field& field, const Batch& x, double t, double h,
                 std::size_t step_index = 0);
/// x + h v(x + (h/2) v(x, t), t + h/2).
Batch midpoint_step(const Field& field, const Batch& x, double t, double h,
                    std::size_t step_index = 0);

struct Trajectory {
  std::vector<double> times;  // grid nodes
  std::vector<Batch> states;  // states[i] at times[i]; states[0] is x0
  std::uint64_t seed = 0;
  std::string spec_hash;

  const Batch& final_state() const { return states.back(); }
};

/// Integrates from t = 0 to t = 1. States are copied unchanged during the
/// first spec.gated_steps() steps while time still advances; every later
/// step calls `field` with its step index.
Trajectory integrate(const GuidedField& field, const Batch& x0, const TimeGrid& grid,
                     Method method, const GuidanceSpec& spec);

/// "sample_id,step,t,x0,...,x{d-1}", one row per (sample, step).
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

}  // namespace flowguide
