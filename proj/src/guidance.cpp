// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/guidance.hpp"

#include <array>
#include <cmath>

#include <json.hpp>

#include "flowguide/errors.hpp"

namespace flowguide {
namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 5> kNames{{
    {Strategy::kConditional, "conditional"},
    {Strategy::kCfg, "cfg"},
    {Strategy::kCfgScale, "cfg-scale"},
    {Strategy::kCfgZeroInit, "cfg-zero-init"},
    {Strategy::kCfgZeroStar, "cfg-zero-star"},
}};

void check_same_shape(Eigen::Index r1, Eigen::Index c1, Eigen::Index r2, Eigen::Index c2) {
  if (r1 != r2 || c1 != c2) throw ConfigError("conditional and unconditional velocities differ in shape");
}

}  // namespace

std::string_view to_string(Strategy strategy) {
  for (const auto& [s, name] : kNames) {
    if (s == strategy) return name;
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& [s, n] : kNames) {
    if (n == name) return s;
  }
  throw ConfigError("unknown guidance strategy \"" + std::string(name) + "\"");
}

void GuidanceSpec::validate(std::size_t solver_steps) const {
  if (!(omega >= 1.0) || !std::isfinite(omega)) throw ConfigError("guidance omega must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("guidance epsilon must be positive");
  if (solver_steps > 0 && zero_init_steps > solver_steps) {
    throw ConfigError("zero_init_steps exceeds the number of solver steps");
  }
}

std::string to_json(const GuidanceSpec& spec) {
  nlohmann::ordered_json j;
  j["strategy"] = std::string(to_string(spec.strategy));
  j["omega"] = spec.omega;
  j["zero_init_steps"] = spec.zero_init_steps;
  j["epsilon"] = spec.epsilon;
  return j.dump();
}

GuidanceSpec guidance_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("guidance: ") + e.what());
  }
  GuidanceSpec spec;
  try {
    spec.strategy = parse_strategy(j.at("strategy").get<std::string>());
    spec.omega = j.at("omega").get<double>();
    spec.zero_init_steps = j.value("zero_init_steps", std::size_t{1});
    spec.epsilon = j.value("epsilon", 1e-8);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("guidance: ") + e.what());
  }
  spec.validate();
  return spec;
}

double optimized_scale(const Vec& v_cond, const Vec& v_uncond, double epsilon) {
  check_same_shape(v_cond.rows(), v_cond.cols(), v_uncond.rows(), v_uncond.cols());
  return v_cond.dot(v_uncond) / (v_uncond.squaredNorm() + epsilon);
}

Eigen::RowVectorXd optimized_scale(const Batch& v_cond, const Batch& v_uncond, double epsilon) {
  check_same_shape(v_cond.rows(), v_cond.cols(), v_uncond.rows(), v_uncond.cols());
  Eigen::RowVectorXd s(v_cond.cols());
  for (Eigen::Index i = 0; i < v_cond.cols(); ++i) {
    s[i] = v_cond.col(i).dot(v_uncond.col(i)) / (v_uncond.col(i).squaredNorm() + epsilon);
  }
  return s;
}

double scale_objective(const Vec& v_cond, const Vec& v_uncond, double s) {
  check_same_shape(v_cond.rows(), v_cond.cols(), v_uncond.rows(), v_uncond.cols());
  return (v_cond - s * v_uncond).squaredNorm();
}

Vec guided_velocity(const GuidanceSpec& spec, const Vec& v_cond, const Vec& v_uncond,
                    std::size_t step_index) {
  check_same_shape(v_cond.rows(), v_cond.cols(), v_uncond.rows(), v_uncond.cols());
  if (step_index < spec.gated_steps()) return Vec::Zero(v_cond.size());
  if (spec.strategy == Strategy::kConditional || spec.omega == 1.0) return v_cond;
  const double s =
      spec.uses_optimized_scale() ? optimized_scale(v_cond, v_uncond, spec.epsilon) : 1.0;
  return (1.0 - spec.omega) * s * v_uncond + spec.omega * v_cond;
}

Batch guided_velocity(const GuidanceSpec& spec, const Batch& v_cond, const Batch& v_uncond,
                      std::size_t step_index) {
  check_same_shape(v_cond.rows(), v_cond.cols(), v_uncond.rows(), v_uncond.cols());
  if (step_index < spec.gated_steps()) return Batch::Zero(v_cond.rows(), v_cond.cols());
  if (spec.strategy == Strategy::kConditional || spec.omega == 1.0) return v_cond;
  Batch out(v_cond.rows(), v_cond.cols());
  const Eigen::RowVectorXd s = spec.uses_optimized_scale()
                                   ? optimized_scale(v_cond, v_uncond, spec.epsilon)
                                   : Eigen::RowVectorXd::Ones(v_cond.cols());
  for (Eigen::Index i = 0; i < v_cond.cols(); ++i) {
    out.col(i) = (1.0 - spec.omega) * s[i] * v_uncond.col(i) + spec.omega * v_cond.col(i);
  }
  return out;
}

}  // namespace flowguide
