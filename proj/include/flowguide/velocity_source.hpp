// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

#include "flowguide/gmm.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/mlp.hpp"

namespace flowguide {

/// Anything that yields conditional and null-conditioned velocities for a
/// batch sharing one time and one label.
class VelocitySource {
 public:
  virtual ~VelocitySource() = default;
  virtual int dim() const = 0;
  virtual Batch conditional(const Batch& x, double t, Label y) const = 0;
  virtual Batch unconditional(const Batch& x, double t) const = 0;
};

/// Closed-form optimal velocities of a task.
class AnalyticVelocity final : public VelocitySource {
 public:
  explicit AnalyticVelocity(const ClassConditionalTask& task) : task_(task) {}
  int dim() const override { return task_.dim(); }
  Batch conditional(const Batch& x, double t, Label y) const override;
  Batch unconditional(const Batch& x, double t) const override;

 private:
  const ClassConditionalTask& task_;
};

/// A trained network; the null condition routes to the null embedding.
class ModelVelocity final : public VelocitySource {
 public:
  explicit ModelVelocity(const MLPVelocityModel& model) : model_(model) {}
  int dim() const override { return model_.shape().input_dim; }
  Batch conditional(const Batch& x, double t, Label y) const override;
  Batch unconditional(const Batch& x, double t) const override;

 private:
  const MLPVelocityModel& model_;
};

/// Guided velocity as a function of (x, t, solver step).
using GuidedField = std::function<Batch(const Batch&, double, std::size_t)>;

/// Binds a source, a guidance spec and a label. The unconditional branch is
/// skipped for the conditional strategy and for gated steps.
GuidedField make_guided_field(const VelocitySource& source, const GuidanceSpec& spec, Label y);

}  // namespace flowguide
