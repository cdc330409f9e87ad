// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: train, eval, trajectories, sweep-zero-init and
// oracle-check. Exit status 0 on success, 2 for configuration or input
// errors, 3 when training or integration diverges.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowguide/errors.hpp"
#include "flowguide/format.hpp"
#include "flowguide/harness.hpp"

namespace {

using namespace flowguide;

constexpr int kConfigExit = 2;
constexpr int kDivergedExit = 3;

// Accepts "--a.b value" and "--a.b=value".
Overrides parse_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() < 3) {
      throw ConfigError("unexpected argument '" + tok + "'");
    }
    const std::string body = tok.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw ConfigError("override '" + tok + "' has no value");
    }
  }
  return out;
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(part, &pos);
      if (pos != part.size() || v < 0) throw std::invalid_argument(part);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("--k: cannot parse '" + part + "'");
    }
  }
  return ks;
}

void print_rows(const std::vector<MetricRow>& rows) {
  std::printf("%6s  %-14s %6s %3s  %10s  %10s  %10s\n", "epoch", "strategy", "omega", "K",
              "jsd", "err_v0", "gt_norm_v0");
  for (const auto& r : rows) {
    std::printf("%6ld  %-14s %6g %3zu  %10.5f  %10.5f  %10.5f\n", r.epoch, r.strategy.c_str(),
                r.omega, r.k, r.jsd, r.err_v0, r.gt_norm_v0);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching guidance experiments on Gaussian-mixture tasks"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config JSON");
    sub->allow_extras();
    sub->footer("Any config field can be overridden with --<dotted.name> <value>.");
  };

  auto* train_cmd = app.add_subcommand("train", "Train and write one checkpoint per epoch");
  add_common(train_cmd);

  std::string epochs_text;
  bool analytic = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints x guidance specs");
  add_common(eval_cmd);
  eval_cmd->add_option("--epochs", epochs_text, "Epoch range a..b");
  eval_cmd->add_flag("--analytic", analytic, "Use the closed-form velocity instead of checkpoints");

  long traj_epoch = -1;
  auto* traj_cmd = app.add_subcommand("trajectories", "Export sampling trajectories");
  add_common(traj_cmd);
  traj_cmd->add_option("--epoch", traj_epoch, "Checkpoint epoch (omit for the analytic velocity)")
      ->check(CLI::NonNegativeNumber);

  std::string k_text;
  auto* sweep_cmd = app.add_subcommand("sweep-zero-init", "Grid over epochs x zero-init steps");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--k", k_text, "Comma-separated K list (default from config)");
  sweep_cmd->add_option("--epochs", epochs_text, "Epoch range a..b");

  std::size_t oracle_points = 50;
  std::size_t oracle_samples = 1000000;
  auto* oracle_cmd =
      app.add_subcommand("oracle-check", "Closed-form velocities against Monte-Carlo estimates");
  add_common(oracle_cmd);
  oracle_cmd->add_option("--points", oracle_points, "Probe points")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--samples", oracle_samples, "Monte-Carlo pairs per estimate")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const ExperimentConfig config = load_config(config_path, parse_overrides(sub->remaining()));

    if (sub == train_cmd) {
      const TrainSummary s = cmd_train(config);
      std::printf("wrote %zu checkpoints to %s\n", s.checkpoints,
                  (config.output_dir / "checkpoints").string().c_str());
      if (!s.curve.empty()) {
        std::printf("validation loss: epoch 1 %.6f, epoch %zu %.6f\n", s.curve.front().validation_loss,
                    s.curve.back().epoch, s.curve.back().validation_loss);
      }
    } else if (sub == eval_cmd) {
      const EpochRange range = epochs_text.empty() ? EpochRange{} : parse_epoch_range(epochs_text);
      print_rows(cmd_eval(config, range, analytic));
    } else if (sub == traj_cmd) {
      std::optional<std::size_t> epoch;
      if (traj_epoch >= 0) epoch = static_cast<std::size_t>(traj_epoch);
      for (const auto& path : cmd_trajectories(config, epoch)) {
        std::printf("wrote %s\n", path.string().c_str());
      }
    } else if (sub == sweep_cmd) {
      const auto ks = k_text.empty() ? config.sweep.k : parse_k_list(k_text);
      std::optional<EpochRange> range;
      if (!epochs_text.empty()) range = parse_epoch_range(epochs_text);
      print_rows(cmd_sweep_zero_init(config, ks, range));
    } else if (sub == oracle_cmd) {
      const OracleReport r =
          oracle_check(resolve_task(config), oracle_points, config.seed, &std::cout, oracle_samples);
      std::printf("conditional within %.0f se: %zu/%zu\nmarginal within %.0f se: %zu/%zu\n%s\n",
                  r.threshold, r.conditional_within, r.points, r.threshold, r.marginal_within,
                  r.points, r.passed() ? "PASS" : "FAIL");
      return r.passed() ? 0 : 1;
    }
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDivergedExit;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigExit;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigExit;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigExit;
  }
  return 0;
}
