// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/solver.hpp"

#include "flowguide/errors.hpp"
#include "flowguide/format.hpp"

namespace flowguide {
namespace {

Batch checked(Batch v, std::size_t step_index) {
  if (!v.allFinite()) throw DivergedError(step_index, "diverged: non-finite velocity");
  return v;
}

}  // namespace

TimeGrid::TimeGrid(std::size_t steps) : steps_(steps) {
  if (steps == 0) throw ConfigError("time grid needs at least one step");
}

std::string_view to_string(Method method) {
  return method == Method::kEuler ? "euler" : "midpoint";
}

Method parse_method(std::string_view name) {
  if (name == "euler") return Method::kEuler;
  if (name == "midpoint") return Method::kMidpoint;
  throw ConfigError("unknown solver method \"" + std::string(name) + "\"");
}

Batch euler_step(const Field& field, const Batch& x, double t, double h,
                 std::size_t step_index) {
  if (!(h > 0.0)) throw ConfigError("step size must be positive");
  return x + h * checked(field(x, t), step_index);
}

Batch midpoint_step(const Field& field, const Batch& x, double t, double h,
                    std::size_t step_index) {
  if (!(h > 0.0)) throw ConfigError("step size must be positive");
  const Batch half = x + (0.5 * h) * checked(field(x, t), step_index);
  return x + h * checked(field(half, t + 0.5 * h), step_index);
}

Trajectory integrate(const GuidedField& field, const Batch& x0, const TimeGrid& grid,
                     Method method, const GuidanceSpec& spec) {
  if (!x0.allFinite()) throw ConfigError("initial state must be finite");
  spec.validate(grid.steps());
  Trajectory traj;
  traj.times.reserve(grid.steps() + 1);
  traj.states.reserve(grid.steps() + 1);
  traj.times.push_back(grid.node(0));
  traj.states.push_back(x0);
  const std::size_t gated = spec.gated_steps();
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double t = grid.node(i);
    const double h = grid.step_size(i);
    if (i < gated) {
      traj.states.push_back(traj.states.back());
    } else {
      const Field at_step = [&field, i](const Batch& x, double tt) { return field(x, tt, i); };
      const Batch& x = traj.states.back();
      traj.states.push_back(method == Method::kEuler ? euler_step(at_step, x, t, h, i)
                                                     : midpoint_step(at_step, x, t, h, i));
    }
    traj.times.push_back(grid.node(i + 1));
  }
  return traj;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const Eigen::Index d = trajectory.states.front().rows();
  out << "sample_id,step,t";
  for (Eigen::Index k = 0; k < d; ++k) out << ",x" << k;
  out << '\n';
  const Eigen::Index n = trajectory.states.front().cols();
  for (Eigen::Index s = 0; s < n; ++s) {
    for (std::size_t step = 0; step < trajectory.states.size(); ++step) {
      out << s << ',' << step << ',' << format_real(trajectory.times[step]);
      for (Eigen::Index k = 0; k < d; ++k) {
        out << ',' << format_real(trajectory.states[step](k, s));
      }
      out << '\n';
    }
  }
}

}  // namespace flowguide
