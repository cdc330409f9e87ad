// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowguide/gmm.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/metrics.hpp"
#include "flowguide/mlp.hpp"
#include "flowguide/solver.hpp"
#include "flowguide/train.hpp"

namespace flowguide {

struct SolverSettings {
  Method method = Method::kMidpoint;
  std::size_t steps = 100;
};

struct MetricSettings {
  std::size_t samples_per_class = 10000;
  std::size_t probes = 512;
  HistogramGrid grid;
};

struct TrajectorySettings {
  std::size_t steps = 10;
  std::size_t samples = 500;
  Label label = 0;
};

struct SweepSettings {
  Strategy strategy = Strategy::kCfgZeroInit;
  double omega = 1.25;
  /// Solver steps for the ablation; K counts steps of this grid.
  std::size_t steps = 10;
  /// Epochs evaluated by default: 1 and every multiple of `every`.
  std::size_t every = 5;
  std::vector<std::size_t> k{0, 1, 2, 3, 4};
};

struct ExperimentConfig {
  /// Path to a task JSON file, or "default" for the built-in task.
  std::string task = "default";
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;
  ModelShape model;
  TrainConfig train;  // train.seed mirrors `seed`
  std::vector<GuidanceSpec> guidance;
  SolverSettings solver;
  MetricSettings metrics;
  TrajectorySettings trajectories;
  SweepSettings sweep;
};

/// The full default configuration as JSON; every key is a valid override.
nlohmann::ordered_json default_config_json();
/// Strict: unknown keys and out-of-range values throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

/// Dotted-name overrides, e.g. {"train.epochs", "5"}. Values are parsed as
/// JSON when possible and taken as strings otherwise.
using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Default config, then the file (if non-empty), then the overrides, then
/// FLOWGUIDE_SEED when `use_env` is set.
ExperimentConfig load_config(const std::filesystem::path& file, const Overrides& overrides,
                             bool use_env = true);

ClassConditionalTask resolve_task(const ExperimentConfig& config);

/// SHA-256 over the settings that determine training.
std::string training_hash(const ExperimentConfig& config);
std::string sha256_hex(const std::string& bytes);

/// Inclusive epoch range; unset bounds mean "all available".
struct EpochRange {
  std::optional<std::size_t> first;
  std::optional<std::size_t> last;
  bool contains(std::size_t e) const {
    return (!first || e >= *first) && (!last || e <= *last);
  }
};
/// Parses "a..b", "a..", "..b" or "a". Throws ConfigError.
EpochRange parse_epoch_range(const std::string& text);

struct TrainSummary {
  std::size_t checkpoints = 0;
  std::vector<EpochRecord> curve;
};

/// Writes checkpoints/epoch_XXXX.json, loss_curve.csv, config.json and
/// refreshes manifest.json.
TrainSummary cmd_train(const ExperimentConfig& config);

/// Row of metrics.csv. epoch == -1 marks the analytic velocity source.
struct MetricRow {
  long epoch = 0;
  std::string strategy;
  double omega = 1.0;
  std::size_t k = 0;
  double jsd = 0.0;
  double err_v0 = 0.0;
  double gt_norm_v0 = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr long kAnalyticEpoch = -1;

/// Evaluates one (velocity source, guidance) cell: JSD of generated samples
/// against each class target and the t = 0 velocity error, both averaged over
/// classes. Initial noise and probes derive from the master seed only, so
/// every cell sees the same draws.
MetricRow evaluate_cell(const ClassConditionalTask& task, const VelocitySource& source,
                        const GuidanceSpec& spec, const SolverSettings& solver,
                        const MetricSettings& metrics, std::uint64_t seed, long epoch);

/// Checkpoint epochs present under output_dir, ascending.
std::vector<std::size_t> available_epochs(const ExperimentConfig& config);

/// Evaluates every (checkpoint in range x guidance spec) cell, or the
/// analytic source when `analytic` is set. Writes metrics.csv/metrics.json.
std::vector<MetricRow> cmd_eval(const ExperimentConfig& config, const EpochRange& range,
                                bool analytic = false);

/// One CSV per guidance spec under trajectories/, sharing initial noise.
/// Without an epoch the analytic velocity is used. Returns the files written.
std::vector<std::filesystem::path> cmd_trajectories(const ExperimentConfig& config,
                                                    std::optional<std::size_t> epoch);

/// Grid over (epoch x K) with the sweep strategy and omega. Without an
/// explicit range, epoch 1 and every multiple of sweep.every are used.
/// Writes sweep_zero_init.csv/json.
std::vector<MetricRow> cmd_sweep_zero_init(const ExperimentConfig& config,
                                           const std::vector<std::size_t>& ks,
                                           const std::optional<EpochRange>& range = {});

/// Rows sorted by (epoch, strategy, K, omega).
void sort_rows(std::vector<MetricRow>& rows);
void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);
std::string metrics_json(const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

/// Closed-form velocities against the Monte-Carlo oracle at seeded probe
/// points of the task. One table line per (point, kind).
struct OracleReport {
  std::size_t points = 0;
  std::size_t conditional_within = 0;
  std::size_t marginal_within = 0;
  double threshold = 3.0;  // standard errors
  bool passed(double fraction = 0.95) const;
};
OracleReport oracle_check(const ClassConditionalTask& task, std::size_t points,
                          std::uint64_t seed, std::ostream* table = nullptr,
                          std::size_t mc_samples = 1000000);

/// Rewrites output_dir/manifest.json listing every file with its SHA-256.
void write_manifest(const std::filesystem::path& output_dir);

}  // namespace flowguide
