// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/train.hpp"

#include <cmath>
#include <utility>

#include "flowguide/errors.hpp"

namespace flowguide {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (!(lr_decay >= 0.0)) throw ConfigError("train.lr_decay must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1)");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw ConfigError("train.p_drop must lie in [0, 1]");
  if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch must be positive");
  if (validation_size < 1) throw ConfigError("train.validation_size must be positive");
}

CfmBatch draw_cfm_batch(const ClassConditionalTask& task, std::size_t size, double p_drop,
                        Rng& rng) {
  const auto n = static_cast<Eigen::Index>(size);
  const auto& prior = task.class_prior();
  std::discrete_distribution<int> pick_class(prior.begin(), prior.end());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  CfmBatch batch;
  batch.y.resize(size);
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(task.num_classes()));
  for (std::size_t i = 0; i < size; ++i) {
    batch.y[i] = pick_class(rng);
    members[static_cast<std::size_t>(batch.y[i])].push_back(static_cast<Eigen::Index>(i));
  }
  batch.x0 = task.source().sample(size, rng);
  batch.x1.resize(task.dim(), n);
  for (Label c = 0; c < task.num_classes(); ++c) {
    const auto& idx = members[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    const Batch draws = task.target(c).sample(idx.size(), rng);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      batch.x1.col(idx[j]) = draws.col(static_cast<Eigen::Index>(j));
    }
  }
  batch.t.resize(size);
  for (auto& t : batch.t) t = uniform(rng);
  for (auto& y : batch.y) {
    if (uniform(rng) < p_drop) y = kNullLabel;
  }
  return batch;
}

TrainResult train(const ClassConditionalTask& task, MLPVelocityModel model,
                  const TrainConfig& config, const CheckpointCallback& on_checkpoint) {
  config.validate();
  if (model.shape().input_dim != task.dim()) {
    throw ConfigError("model input dimension does not match the task");
  }
  if (model.shape().num_classes != task.num_classes()) {
    throw ConfigError("model class count does not match the task");
  }

  Rng validation_rng(derive_seed(config.seed, "validation"));
  const CfmBatch validation =
      draw_cfm_batch(task, config.validation_size, config.p_drop, validation_rng);
  Rng rng(derive_seed(config.seed, "train-data"));
  AdamState state = AdamState::for_model(model);
  Parameters ema = Parameters::zeros_like(model.params());
  double ema_weight = 0.0;  // 1 - decay^steps, for bias correction
  MLPVelocityModel snapshot = model;

  TrainResult result;
  result.checkpoints.push_back(model);
  if (on_checkpoint) on_checkpoint(0, model, nullptr);

  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    AdamConfig adam = config.adam;
    adam.learning_rate /= 1.0 + config.lr_decay * static_cast<double>(epoch - 1);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < config.steps_per_epoch; ++s, ++global_step) {
      const CfmBatch batch = draw_cfm_batch(task, config.batch_size, config.p_drop, rng);
      const auto lg = cfm_loss_and_gradients(model, batch, global_step);
      loss_sum += lg.loss;
      adam_step(model, lg.gradients, state, adam);
      if (config.ema_decay > 0.0) {
        auto acc = ema.arrays();
        const auto cur = std::as_const(model).params().arrays();
        for (std::size_t a = 0; a < acc.size(); ++a) {
          for (std::size_t i = 0; i < acc[a].size(); ++i) {
            acc[a][i] = config.ema_decay * acc[a][i] + (1.0 - config.ema_decay) * cur[a][i];
          }
        }
        ema_weight = config.ema_decay * ema_weight + (1.0 - config.ema_decay);
      }
    }
    if (!model.params().all_finite()) {
      throw DivergedError(global_step, "diverged: non-finite parameters");
    }
    if (config.ema_decay > 0.0) {
      auto out = snapshot.params().arrays();
      const auto acc = std::as_const(ema).arrays();
      for (std::size_t a = 0; a < out.size(); ++a) {
        for (std::size_t i = 0; i < out[a].size(); ++i) out[a][i] = acc[a][i] / ema_weight;
      }
    } else {
      snapshot = model;
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(config.steps_per_epoch),
                       cfm_loss(snapshot, validation)};
    if (!std::isfinite(record.validation_loss)) {
      throw DivergedError(global_step, "diverged: non-finite validation loss");
    }
    result.checkpoints.push_back(snapshot);
    result.curve.push_back(record);
    if (on_checkpoint) on_checkpoint(epoch, snapshot, &record);
  }
  return result;
}

}  // namespace flowguide
