// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/velocity_source.hpp"

namespace flowguide {

Batch AnalyticVelocity::conditional(const Batch& x, double t, Label y) const {
  const auto& target = task_.target(y);
  Batch out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    out.col(i) = optimal_velocity(task_.source(), target, x.col(i), t);
  }
  return out;
}

Batch AnalyticVelocity::unconditional(const Batch& x, double t) const {
  return conditional(x, t, kNullLabel);
}

Batch ModelVelocity::conditional(const Batch& x, double t, Label y) const {
  return model_.forward(x, t, y);
}

Batch ModelVelocity::unconditional(const Batch& x, double t) const {
  return model_.forward(x, t, kNullLabel);
}

GuidedField make_guided_field(const VelocitySource& source, const GuidanceSpec& spec, Label y) {
  return [&source, spec, y](const Batch& x, double t, std::size_t step) -> Batch {
    if (step < spec.gated_steps()) return Batch::Zero(x.rows(), x.cols());
    const Batch v_cond = source.conditional(x, t, y);
    if (spec.strategy == Strategy::kConditional || spec.omega == 1.0) return v_cond;
    return guided_velocity(spec, v_cond, source.unconditional(x, t), step);
  };
}

}  // namespace flowguide
