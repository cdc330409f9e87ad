// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "flowguide/gmm.hpp"
#include "flowguide/mlp.hpp"

namespace flowguide {

struct TrainConfig {
  std::size_t batch_size = 256;
  AdamConfig adam;
  /// Epoch e uses learning_rate / (1 + lr_decay * (e - 1)).
  double lr_decay = 0.0;
  /// Checkpoints hold a bias-corrected exponential moving average of the
  /// weights with this decay per step; 0 checkpoints the raw weights.
  double ema_decay = 0.0;
  /// Probability of replacing a label with the null condition.
  double p_drop = 0.1;
  std::size_t epochs = 0;
  std::size_t steps_per_epoch = 200;
  std::uint64_t seed = 0;
  /// Size of the fixed batch used for the per-epoch validation loss.
  std::size_t validation_size = 4096;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;       // mean over the epoch's steps
  double validation_loss = 0.0;  // on the fixed validation batch
};

struct TrainResult {
  /// checkpoints[e] is the model after e epochs; checkpoints[0] is the init.
  std::vector<MLPVelocityModel> checkpoints;
  std::vector<EpochRecord> curve;
};

/// Called after initialization (record == nullptr) and after every epoch.
using CheckpointCallback =
    std::function<void(std::size_t epoch, const MLPVelocityModel&, const EpochRecord*)>;

/// Draws a CFM batch: y from the class prior, x0 from the source, x1 from
/// the class target, t ~ U[0, 1], then drops each label to the null
/// condition with probability p_drop.
CfmBatch draw_cfm_batch(const ClassConditionalTask& task, std::size_t size, double p_drop,
                        Rng& rng);

/// Adam on the CFM loss with condition dropout. Throws DivergedError with
/// the global step index if the loss becomes non-finite.
TrainResult train(const ClassConditionalTask& task, MLPVelocityModel model,
                  const TrainConfig& config, const CheckpointCallback& on_checkpoint = {});

}  // namespace flowguide
