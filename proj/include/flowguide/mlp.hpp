// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "flowguide/gmm.hpp"

namespace flowguide {

/// Raw t followed by sin/cos pairs at frequencies 1, 2, 4, 8.
inline constexpr int kTimeFeatures = 9;
Vec time_features(double t);

struct ModelShape {
  int input_dim = 2;
  std::vector<int> hidden{128, 128};
  int num_classes = 2;
  int embed_dim = 16;

  int feature_dim() const { return input_dim + kTimeFeatures + embed_dim; }
  bool operator==(const ModelShape&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Vec bias;
};

/// All trainable arrays. Also used for gradients and optimizer moments.
struct Parameters {
  std::vector<DenseLayer> dense;
  /// embed_dim x (num_classes + 1); the last column is the null token.
  Eigen::MatrixXd embedding;

  static Parameters zeros_like(const Parameters& other);

  /// Flat views in a fixed order: dense[0].weight, dense[0].bias, ...,
  /// embedding. Matrices are viewed column-major.
  std::vector<std::span<double>> arrays();
  std::vector<std::span<const double>> arrays() const;
  std::size_t count() const;
  bool all_finite() const;
};

/// Velocity field v(x, t | y): an MLP over [x, time features, class
/// embedding] with tanh hidden layers and a linear output.
class MLPVelocityModel {
 public:
  /// Glorot-uniform hidden layers, zero output layer, N(0, 1) embeddings.
  MLPVelocityModel(ModelShape shape, std::uint64_t seed);
  /// Throws FormatError if the arrays do not match `shape`.
  MLPVelocityModel(ModelShape shape, Parameters params);

  const ModelShape& shape() const { return shape_; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }

  /// Embedding column for a label; kNullLabel maps to the null column.
  /// Throws ConfigError for labels outside [0, num_classes).
  Eigen::Index embedding_column(Label y) const;

  /// x is d x N, t and y have N entries.
  Batch forward(const Batch& x, std::span<const double> t, std::span<const Label> y) const;
  /// Shared t and label across the batch.
  Batch forward(const Batch& x, double t, Label y) const;

 private:
  ModelShape shape_;
  Parameters params_;
};

struct CfmBatch {
  Batch x0;
  Batch x1;
  std::vector<double> t;
  std::vector<Label> y;
};

struct LossAndGradients {
  double loss = 0.0;
  Parameters gradients;
};

/// Mean over the batch of ||v(x_t, t | y) - (x1 - x0)||^2 with
/// x_t = (1 - t) x0 + t x1, and its gradient by reverse-mode accumulation.
/// Throws DivergedError(step_index) when the loss is not finite.
LossAndGradients cfm_loss_and_gradients(const MLPVelocityModel& model,
                                        const CfmBatch& batch,
                                        std::size_t step_index = 0);
/// Loss only, no gradient bookkeeping.
double cfm_loss(const MLPVelocityModel& model, const CfmBatch& batch);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Parameters first_moment;
  Parameters second_moment;
  std::uint64_t step = 0;

  static AdamState for_model(const MLPVelocityModel& model);
};

/// Bias-corrected Adam update in place.
void adam_step(MLPVelocityModel& model, const Parameters& gradients, AdamState& state,
               const AdamConfig& config);

}  // namespace flowguide
