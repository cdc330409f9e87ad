// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>
#include <tuple>

#include <openssl/evp.h>

#include "flowguide/checkpoint.hpp"
#include "flowguide/errors.hpp"
#include "flowguide/format.hpp"
#include "flowguide/velocity_source.hpp"

namespace flowguide {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json guidance_json(const GuidanceSpec& spec) {
  return ordered_json::parse(to_json(spec));
}

// Recursively overlays `patch` onto `base`. Every key in `patch` must already
// exist in `base`; arrays and scalars are replaced wholesale.
void merge_strict(ordered_json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config: expected an object at '" + prefix + "'");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (base[key].is_object()) {
      merge_strict(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

std::size_t get_count(const json& j, const char* key, const std::string& path) {
  const json& v = j.at(key);
  if (!is_count(v)) {
    throw ConfigError("config: '" + path + "." + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_real(const json& j, const char* key, const std::string& path) {
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError("config: '" + path + "." + key + "' must be a number");
  return v.get<double>();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw ConfigError("cannot write " + path.string());
}

std::string epoch_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu", epoch);
  return buf;
}

fs::path checkpoint_dir(const ExperimentConfig& config) {
  return config.output_dir / "checkpoints";
}

fs::path checkpoint_path(const ExperimentConfig& config, std::size_t epoch) {
  return checkpoint_dir(config) / (epoch_name(epoch) + ".json");
}

MLPVelocityModel load_model_for(const ExperimentConfig& config, const ClassConditionalTask& task,
                                std::size_t epoch) {
  const fs::path path = checkpoint_path(config, epoch);
  if (!fs::exists(path)) throw ConfigError("missing checkpoint " + path.string());
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.model.shape().input_dim != task.dim() ||
      ckpt.model.shape().num_classes != task.num_classes()) {
    throw ConfigError("checkpoint " + path.string() + " does not match the task");
  }
  return std::move(ckpt.model);
}

void write_rows(const fs::path& dir, const std::string& stem, const std::vector<MetricRow>& rows) {
  std::ostringstream csv;
  write_metrics_csv(csv, rows);
  write_file(dir / (stem + ".csv"), csv.str());
  write_file(dir / (stem + ".json"), metrics_json(rows));
}

}  // namespace

ordered_json default_config_json() {
  const ExperimentConfig d;
  ordered_json j;
  j["task"] = d.task;
  j["output_dir"] = d.output_dir.string();
  j["seed"] = d.seed;
  j["model"] = {{"hidden", d.model.hidden}, {"embed_dim", d.model.embed_dim}};
  // Experiment schedule: the decayed learning rate and long weight average
  // keep the fixed-batch validation loss non-increasing on the plateau.
  j["train"] = {{"epochs", 100},
                {"steps_per_epoch", 500},
                {"batch_size", d.train.batch_size},
                {"learning_rate", d.train.adam.learning_rate},
                {"beta1", d.train.adam.beta1},
                {"beta2", d.train.adam.beta2},
                {"adam_epsilon", d.train.adam.epsilon},
                {"lr_decay", 0.1},
                {"ema_decay", 0.9999},
                {"p_drop", d.train.p_drop},
                {"validation_size", d.train.validation_size}};
  j["guidance"] = ordered_json::array({
      guidance_json({Strategy::kConditional, 1.0, 1}),
      guidance_json({Strategy::kCfg, 2.0, 1}),
      guidance_json({Strategy::kCfgZeroStar, 2.0, 1}),
  });
  j["solver"] = {{"method", std::string(to_string(d.solver.method))}, {"steps", d.solver.steps}};
  j["metrics"] = {{"samples_per_class", d.metrics.samples_per_class},
                  {"probes", d.metrics.probes},
                  {"grid_radius", d.metrics.grid.radius},
                  {"grid_bins", d.metrics.grid.bins}};
  j["trajectories"] = {{"steps", d.trajectories.steps},
                       {"samples", d.trajectories.samples},
                       {"label", d.trajectories.label}};
  j["sweep"] = {{"strategy", std::string(to_string(d.sweep.strategy))},
                {"omega", d.sweep.omega},
                {"steps", d.sweep.steps},
                {"every", d.sweep.every},
                {"k", d.sweep.k}};
  return j;
}

ExperimentConfig config_from_json(const json& input) {
  ordered_json j = default_config_json();
  merge_strict(j, input, "");
  ExperimentConfig c;
  try {
    c.task = j.at("task").get<std::string>();
    c.output_dir = j.at("output_dir").get<std::string>();
    if (c.output_dir.empty()) throw ConfigError("config: 'output_dir' must not be empty");
    c.seed = get_count(j, "seed", "");

    const json& m = j.at("model");
    c.model.hidden.clear();
    for (const auto& h : m.at("hidden")) {
      if (!is_count(h) || h.get<int>() < 1) {
        throw ConfigError("config: 'model.hidden' entries must be positive integers");
      }
      c.model.hidden.push_back(h.get<int>());
    }
    if (c.model.hidden.empty()) throw ConfigError("config: 'model.hidden' must not be empty");
    c.model.embed_dim = static_cast<int>(get_count(m, "embed_dim", "model"));
    if (c.model.embed_dim < 1) throw ConfigError("config: 'model.embed_dim' must be positive");

    const json& t = j.at("train");
    c.train.epochs = get_count(t, "epochs", "train");
    c.train.steps_per_epoch = get_count(t, "steps_per_epoch", "train");
    c.train.batch_size = get_count(t, "batch_size", "train");
    c.train.adam.learning_rate = get_real(t, "learning_rate", "train");
    c.train.adam.beta1 = get_real(t, "beta1", "train");
    c.train.adam.beta2 = get_real(t, "beta2", "train");
    c.train.adam.epsilon = get_real(t, "adam_epsilon", "train");
    c.train.lr_decay = get_real(t, "lr_decay", "train");
    c.train.ema_decay = get_real(t, "ema_decay", "train");
    c.train.p_drop = get_real(t, "p_drop", "train");
    c.train.validation_size = get_count(t, "validation_size", "train");
    c.train.seed = c.seed;
    c.train.validate();

    const json& s = j.at("solver");
    c.solver.method = parse_method(s.at("method").get<std::string>());
    c.solver.steps = get_count(s, "steps", "solver");
    if (c.solver.steps < 1) throw ConfigError("config: 'solver.steps' must be positive");

    const json& g = j.at("guidance");
    if (!g.is_array()) throw ConfigError("config: 'guidance' must be a list");
    for (const auto& spec : g) {
      c.guidance.push_back(guidance_from_json(spec.dump()));
      c.guidance.back().validate(c.solver.steps);
    }

    const json& me = j.at("metrics");
    c.metrics.samples_per_class = get_count(me, "samples_per_class", "metrics");
    c.metrics.probes = get_count(me, "probes", "metrics");
    c.metrics.grid.radius = get_real(me, "grid_radius", "metrics");
    c.metrics.grid.bins = get_count(me, "grid_bins", "metrics");
    if (c.metrics.samples_per_class < 1000) {
      throw ConfigError("config: 'metrics.samples_per_class' must be at least 1000");
    }
    if (c.metrics.probes < 1) throw ConfigError("config: 'metrics.probes' must be positive");
    if (!(c.metrics.grid.radius > 0.0) || c.metrics.grid.bins < 1) {
      throw ConfigError("config: histogram grid must have positive radius and bins");
    }

    const json& tr = j.at("trajectories");
    c.trajectories.steps = get_count(tr, "steps", "trajectories");
    c.trajectories.samples = get_count(tr, "samples", "trajectories");
    if (!tr.at("label").is_number_integer()) {
      throw ConfigError("config: 'trajectories.label' must be an integer");
    }
    c.trajectories.label = tr.at("label").get<int>();
    if (c.trajectories.steps < 1 || c.trajectories.samples < 1) {
      throw ConfigError("config: trajectories need positive steps and samples");
    }

    const json& sw = j.at("sweep");
    c.sweep.strategy = parse_strategy(sw.at("strategy").get<std::string>());
    c.sweep.omega = get_real(sw, "omega", "sweep");
    c.sweep.steps = get_count(sw, "steps", "sweep");
    c.sweep.every = get_count(sw, "every", "sweep");
    c.sweep.k.clear();
    for (const auto& k : sw.at("k")) {
      if (!is_count(k)) throw ConfigError("config: 'sweep.k' entries must be non-negative integers");
      c.sweep.k.push_back(k.get<std::size_t>());
    }
    if (c.sweep.steps < 1 || c.sweep.every < 1) {
      throw ConfigError("config: 'sweep.steps' and 'sweep.every' must be positive");
    }
    const GuidanceSpec sweep_spec{c.sweep.strategy, c.sweep.omega, 0};
    if (!sweep_spec.uses_zero_init()) {
      throw ConfigError("config: 'sweep.strategy' must use zero-init");
    }
    sweep_spec.validate(c.sweep.steps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j = default_config_json();
  j["task"] = c.task;
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["model"]["hidden"] = c.model.hidden;
  j["model"]["embed_dim"] = c.model.embed_dim;
  auto& t = j["train"];
  t["epochs"] = c.train.epochs;
  t["steps_per_epoch"] = c.train.steps_per_epoch;
  t["batch_size"] = c.train.batch_size;
  t["learning_rate"] = c.train.adam.learning_rate;
  t["beta1"] = c.train.adam.beta1;
  t["beta2"] = c.train.adam.beta2;
  t["adam_epsilon"] = c.train.adam.epsilon;
  t["lr_decay"] = c.train.lr_decay;
  t["ema_decay"] = c.train.ema_decay;
  t["p_drop"] = c.train.p_drop;
  t["validation_size"] = c.train.validation_size;
  j["guidance"] = ordered_json::array();
  for (const auto& g : c.guidance) j["guidance"].push_back(guidance_json(g));
  j["solver"]["method"] = std::string(to_string(c.solver.method));
  j["solver"]["steps"] = c.solver.steps;
  j["metrics"]["samples_per_class"] = c.metrics.samples_per_class;
  j["metrics"]["probes"] = c.metrics.probes;
  j["metrics"]["grid_radius"] = c.metrics.grid.radius;
  j["metrics"]["grid_bins"] = c.metrics.grid.bins;
  j["trajectories"]["steps"] = c.trajectories.steps;
  j["trajectories"]["samples"] = c.trajectories.samples;
  j["trajectories"]["label"] = c.trajectories.label;
  j["sweep"]["strategy"] = std::string(to_string(c.sweep.strategy));
  j["sweep"]["omega"] = c.sweep.omega;
  j["sweep"]["steps"] = c.sweep.steps;
  j["sweep"]["every"] = c.sweep.every;
  j["sweep"]["k"] = c.sweep.k;
  return j;
}

ExperimentConfig load_config(const fs::path& file, const Overrides& overrides, bool use_env) {
  json merged = json::object();
  if (!file.empty()) {
    try {
      merged = json::parse(read_file(file));
    } catch (const json::exception& e) {
      throw ConfigError("config " + file.string() + ": " + e.what());
    }
    if (!merged.is_object()) throw ConfigError("config " + file.string() + ": expected an object");
  }
  for (const auto& [key, raw] : overrides) {
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &merged;
    std::string::size_type start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (part.empty()) throw ConfigError("override: malformed name '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& child = (*node)[part];
      if (!child.is_object()) child = json::object();
      node = &child;
      start = dot + 1;
    }
  }
  if (use_env) {
    if (const char* env = std::getenv("FLOWGUIDE_SEED"); env != nullptr && *env != '\0') {
      std::uint64_t seed = 0;
      const char* end = env + std::char_traits<char>::length(env);
      const auto [ptr, ec] = std::from_chars(env, end, seed);
      if (ec != std::errc() || ptr != end) {
        throw ConfigError(std::string("FLOWGUIDE_SEED is not an unsigned integer: ") + env);
      }
      merged["seed"] = seed;
    }
  }
  return config_from_json(merged);
}

ClassConditionalTask resolve_task(const ExperimentConfig& config) {
  if (config.task == "default") return default_task();
  return load_task(config.task);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string training_hash(const ExperimentConfig& config) {
  const ordered_json full = config_to_json(config);
  ordered_json j;
  j["task"] = json::parse(task_to_json(resolve_task(config)));
  j["seed"] = full["seed"];
  j["model"] = full["model"];
  j["train"] = full["train"];
  return sha256_hex(j.dump());
}

EpochRange parse_epoch_range(const std::string& text) {
  auto parse_one = [&](const std::string& s) -> std::optional<std::size_t> {
    if (s.empty()) return std::nullopt;
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("epoch range: cannot parse '" + text + "'");
    }
    return v;
  };
  EpochRange r;
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    r.first = parse_one(text);
    if (!r.first) throw ConfigError("epoch range: empty");
    r.last = r.first;
  } else {
    r.first = parse_one(text.substr(0, dots));
    r.last = parse_one(text.substr(dots + 2));
  }
  if (r.first && r.last && *r.first > *r.last) {
    throw ConfigError("epoch range: first epoch exceeds last in '" + text + "'");
  }
  return r;
}

TrainSummary cmd_train(const ExperimentConfig& config) {
  const ClassConditionalTask task = resolve_task(config);
  const std::string hash = training_hash(config);
  fs::create_directories(checkpoint_dir(config));
  for (const auto& entry : fs::directory_iterator(checkpoint_dir(config))) {
    if (entry.path().extension() == ".json") fs::remove(entry.path());
  }
  write_file(config.output_dir / "config.json", config_to_json(config).dump(2) + "\n");

  ModelShape shape = config.model;
  shape.input_dim = task.dim();
  shape.num_classes = task.num_classes();
  const MLPVelocityModel init(shape, derive_seed(config.seed, "init"));

  std::ostringstream curve;
  curve << "epoch,train_loss,validation_loss\n";
  TrainSummary summary;
  auto on_checkpoint = [&](std::size_t epoch, const MLPVelocityModel& model,
                           const EpochRecord* record) {
    save_checkpoint(checkpoint_path(config, epoch), model, epoch, hash);
    ++summary.checkpoints;
    if (record != nullptr) {
      curve << record->epoch << ',' << format_real(record->train_loss) << ','
            << format_real(record->validation_loss) << '\n';
      summary.curve.push_back(*record);
    }
  };
  try {
    train(task, init, config.train, on_checkpoint);
  } catch (const DivergedError&) {
    write_file(config.output_dir / "loss_curve.csv", curve.str());
    write_manifest(config.output_dir);
    throw;
  }
  write_file(config.output_dir / "loss_curve.csv", curve.str());
  write_manifest(config.output_dir);
  return summary;
}

MetricRow evaluate_cell(const ClassConditionalTask& task, const VelocitySource& source,
                        const GuidanceSpec& spec, const SolverSettings& solver,
                        const MetricSettings& metrics, std::uint64_t seed, long epoch) {
  spec.validate(solver.steps);
  MetricRow row;
  row.epoch = epoch;
  row.strategy = std::string(to_string(spec.strategy));
  row.omega = spec.omega;
  row.k = spec.gated_steps();
  row.seed = seed;
  const double classes = static_cast<double>(task.num_classes());
  for (Label y = 0; y < task.num_classes(); ++y) {
    const auto coord = static_cast<std::uint64_t>(y);
    const Batch x0 =
        task.source().sample(metrics.samples_per_class, derive_seed(seed, "eval-noise", {coord}));
    const Trajectory traj = integrate(make_guided_field(source, spec, y), x0,
                                      TimeGrid(solver.steps), solver.method, spec);
    row.jsd += jsd_to_target(traj.final_state(), task.target(y), metrics.grid).value / classes;
    const VelocityError err = velocity_error_at_zero(
        source, spec, task, y, derive_seed(seed, "probe", {coord}), metrics.probes);
    row.err_v0 += err.error_norm / classes;
    row.gt_norm_v0 += err.ground_truth_norm / classes;
  }
  return row;
}

std::vector<std::size_t> available_epochs(const ExperimentConfig& config) {
  std::vector<std::size_t> epochs;
  const fs::path dir = checkpoint_dir(config);
  if (!fs::is_directory(dir)) return epochs;
  static const std::regex pattern(R"(epoch_(\d{4,})\.json)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) epochs.push_back(std::stoull(m[1].str()));
  }
  std::sort(epochs.begin(), epochs.end());
  return epochs;
}

namespace {

std::vector<std::size_t> select_epochs(const ExperimentConfig& config, const EpochRange& range) {
  const auto available = available_epochs(config);
  if (available.empty()) {
    throw ConfigError("no checkpoints under " + checkpoint_dir(config).string());
  }
  std::vector<std::size_t> chosen;
  for (std::size_t e : available) {
    if (range.contains(e)) chosen.push_back(e);
  }
  // Explicit bounds must name existing checkpoints.
  for (const auto& bound : {range.first, range.last}) {
    if (bound && !std::binary_search(available.begin(), available.end(), *bound)) {
      throw ConfigError("missing checkpoint " + checkpoint_path(config, *bound).string());
    }
  }
  if (chosen.empty()) throw ConfigError("no checkpoints in the requested epoch range");
  return chosen;
}

}  // namespace

std::vector<MetricRow> cmd_eval(const ExperimentConfig& config, const EpochRange& range,
                                bool analytic) {
  const ClassConditionalTask task = resolve_task(config);
  if (config.guidance.empty()) throw ConfigError("config: 'guidance' is empty");
  std::vector<MetricRow> rows;
  if (analytic) {
    const AnalyticVelocity source(task);
    for (const auto& spec : config.guidance) {
      rows.push_back(evaluate_cell(task, source, spec, config.solver, config.metrics,
                                   config.seed, kAnalyticEpoch));
    }
  } else {
    for (std::size_t epoch : select_epochs(config, range)) {
      const MLPVelocityModel model = load_model_for(config, task, epoch);
      const ModelVelocity source(model);
      for (const auto& spec : config.guidance) {
        rows.push_back(evaluate_cell(task, source, spec, config.solver, config.metrics,
                                     config.seed, static_cast<long>(epoch)));
      }
    }
  }
  sort_rows(rows);
  write_rows(config.output_dir, analytic ? "metrics_analytic" : "metrics", rows);
  write_manifest(config.output_dir);
  return rows;
}

std::vector<fs::path> cmd_trajectories(const ExperimentConfig& config,
                                       std::optional<std::size_t> epoch) {
  const ClassConditionalTask task = resolve_task(config);
  const Label label = config.trajectories.label;
  if (label < 0 || label >= task.num_classes()) {
    throw ConfigError("config: 'trajectories.label' is not a class of the task");
  }
  if (config.guidance.empty()) throw ConfigError("config: 'guidance' is empty");
  std::optional<MLPVelocityModel> model;
  if (epoch) model = load_model_for(config, task, *epoch);
  std::unique_ptr<VelocitySource> source;
  if (model) {
    source = std::make_unique<ModelVelocity>(*model);
  } else {
    source = std::make_unique<AnalyticVelocity>(task);
  }

  const Batch x0 = task.source().sample(
      config.trajectories.samples,
      derive_seed(config.seed, "trajectory-noise", {static_cast<std::uint64_t>(label)}));
  const TimeGrid grid(config.trajectories.steps);
  const std::string prefix = epoch ? epoch_name(*epoch) : "analytic";
  std::vector<fs::path> written;
  std::set<std::string> names;
  for (const auto& spec : config.guidance) {
    spec.validate(grid.steps());
    Trajectory traj =
        integrate(make_guided_field(*source, spec, label), x0, grid, config.solver.method, spec);
    traj.seed = config.seed;
    traj.spec_hash = sha256_hex(to_json(spec)).substr(0, 16);
    char tag[64];
    std::snprintf(tag, sizeof tag, "_w%g_k%zu", spec.omega, spec.gated_steps());
    const std::string name = prefix + "_" + std::string(to_string(spec.strategy)) + tag + ".csv";
    if (!names.insert(name).second) throw ConfigError("duplicate guidance spec " + name);
    std::ostringstream csv;
    write_trajectory_csv(csv, traj);
    const fs::path path = config.output_dir / "trajectories" / name;
    write_file(path, csv.str());
    written.push_back(path);
  }
  write_manifest(config.output_dir);
  return written;
}

std::vector<MetricRow> cmd_sweep_zero_init(const ExperimentConfig& config,
                                           const std::vector<std::size_t>& ks,
                                           const std::optional<EpochRange>& range) {
  const ClassConditionalTask task = resolve_task(config);
  if (ks.empty()) throw ConfigError("sweep: empty K list");
  for (std::size_t k : ks) GuidanceSpec{config.sweep.strategy, config.sweep.omega, k}.validate(config.sweep.steps);

  std::vector<std::size_t> epochs;
  if (range) {
    epochs = select_epochs(config, *range);
  } else {
    for (std::size_t e : available_epochs(config)) {
      if (e == 1 || (e > 0 && e % config.sweep.every == 0)) epochs.push_back(e);
    }
    if (epochs.empty()) throw ConfigError("sweep: no checkpoints to evaluate");
  }
  const SolverSettings solver{config.solver.method, config.sweep.steps};
  std::vector<MetricRow> rows;
  for (std::size_t epoch : epochs) {
    const MLPVelocityModel model = load_model_for(config, task, epoch);
    const ModelVelocity source(model);
    for (std::size_t k : ks) {
      const GuidanceSpec spec{config.sweep.strategy, config.sweep.omega, k};
      rows.push_back(evaluate_cell(task, source, spec, solver, config.metrics, config.seed,
                                   static_cast<long>(epoch)));
    }
  }
  sort_rows(rows);
  write_rows(config.output_dir, "sweep_zero_init", rows);
  write_manifest(config.output_dir);
  return rows;
}

void sort_rows(std::vector<MetricRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.epoch, a.strategy, a.k, a.omega) < std::tie(b.epoch, b.strategy, b.k, b.omega);
  });
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "epoch,strategy,omega,K,jsd,err_v0,gt_norm_v0,seed\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.strategy << ',' << format_real(r.omega) << ',' << r.k << ','
        << format_real(r.jsd) << ',' << format_real(r.err_v0) << ','
        << format_real(r.gt_norm_v0) << ',' << r.seed << '\n';
  }
}

std::string metrics_json(const std::vector<MetricRow>& rows) {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json o;
    o["epoch"] = r.epoch;
    o["strategy"] = r.strategy;
    o["omega"] = r.omega;
    o["K"] = r.k;
    o["jsd"] = r.jsd;
    o["err_v0"] = r.err_v0;
    o["gt_norm_v0"] = r.gt_norm_v0;
    o["seed"] = r.seed;
    j.push_back(o);
  }
  return j.dump(2) + "\n";
}

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "epoch,strategy,omega,K,jsd,err_v0,gt_norm_v0,seed") {
    throw FormatError("header", "unexpected metrics header in " + path.string());
  }
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw FormatError("row", "expected 8 fields: " + line);
    try {
      MetricRow r;
      r.epoch = std::stol(f[0]);
      r.strategy = f[1];
      r.omega = std::stod(f[2]);
      r.k = std::stoull(f[3]);
      r.jsd = std::stod(f[4]);
      r.err_v0 = std::stod(f[5]);
      r.gt_norm_v0 = std::stod(f[6]);
      r.seed = std::stoull(f[7]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("row", "unparseable: " + line);
    }
  }
  return rows;
}

bool OracleReport::passed(double fraction) const {
  const double need = fraction * static_cast<double>(points);
  return static_cast<double>(conditional_within) >= need &&
         static_cast<double>(marginal_within) >= need;
}

OracleReport oracle_check(const ClassConditionalTask& task, std::size_t points,
                          std::uint64_t seed, std::ostream* table, std::size_t mc_samples) {
  OracleReport report;
  report.points = points;
  Rng rng(derive_seed(seed, "oracle-points"));
  std::uniform_real_distribution<double> time(0.1, 0.9);
  std::uniform_int_distribution<int> label(0, task.num_classes() - 1);
  if (table != nullptr) {
    *table << "point  class  t      kind         max|err|/se  n_eff      result\n";
  }
  for (std::size_t i = 0; i < points; ++i) {
    // Probe points are drawn along the interpolation path so the kernel
    // window holds mass.
    const Label y = label(rng);
    const double t = time(rng);
    const Vec x0 = task.source().sample(1, rng).col(0);
    const Vec x1 = task.target(y).sample(1, rng).col(0);
    const Vec x = (1.0 - t) * x0 + t * x1;
    const CondUncond exact = conditional_and_marginal_velocities(task, x, t, y);
    for (int kind = 0; kind < 2; ++kind) {
      McOptions opt;
      opt.n_samples = mc_samples;
      opt.seed = derive_seed(seed, "oracle-mc", {i, static_cast<std::uint64_t>(kind)});
      const GaussianMixture& target = kind == 0 ? task.target(y) : task.marginal();
      const Vec& closed = kind == 0 ? exact.cond : exact.uncond;
      double worst = std::numeric_limits<double>::infinity();
      double n_eff = 0.0;
      try {
        const McEstimate est = mc_velocity_oracle(task.source(), target, x, t, opt);
        worst = ((est.value - closed).array().abs() / est.standard_error.array()).maxCoeff();
        n_eff = est.effective_samples;
      } catch (const InsufficientSupportError& e) {
        n_eff = e.effective_samples();
      }
      const bool ok = worst <= report.threshold;
      if (ok) ++(kind == 0 ? report.conditional_within : report.marginal_within);
      if (table != nullptr) {
        char line[160];
        std::snprintf(line, sizeof line, "%5zu  %5d  %.3f  %-11s  %11.3f  %9.0f  %s\n", i, y, t,
                      kind == 0 ? "conditional" : "marginal", worst, n_eff, ok ? "ok" : "FAIL");
        *table << line;
      }
    }
  }
  return report;
}

void write_manifest(const fs::path& output_dir) {
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& entry : fs::recursive_directory_iterator(output_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), output_dir).generic_string();
    if (rel == "manifest.json") continue;
    files.emplace_back(rel, entry.path());
  }
  std::sort(files.begin(), files.end());
  ordered_json j;
  j["files"] = ordered_json::array();
  for (const auto& [rel, path] : files) {
    const std::string bytes = read_file(path);
    j["files"].push_back({{"path", rel}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  write_file(output_dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace flowguide
