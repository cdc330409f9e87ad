// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowguide/errors.hpp"
#include "flowguide/gmm.hpp"

namespace flowguide {
namespace {

using nlohmann::json;

const json& field(const json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) {
    throw ConfigError(where + ": missing field \"" + name + "\"");
  }
  return j.at(name);
}

std::vector<double> numbers(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

ClassConditionalTask parse_task(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  const json& dim_field = field(doc, "dim", "task");
  if (!dim_field.is_number_integer() || dim_field.get<int>() < 1) {
    throw ConfigError("task.dim must be a positive integer");
  }
  const int dim = dim_field.get<int>();

  const json& classes = field(doc, "classes", "task");
  if (!classes.is_array() || classes.empty()) {
    throw ConfigError("task.classes must be a non-empty array");
  }
  std::vector<GaussianMixture> targets;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const std::string where = "task.classes[" + std::to_string(c) + "]";
    const auto weights = numbers(field(classes[c], "weights", where), where + ".weights");
    const auto variances = numbers(field(classes[c], "variances", where), where + ".variances");
    const json& means = field(classes[c], "means", where);
    if (!means.is_array()) throw ConfigError(where + ".means must be an array");
    if (means.size() != weights.size() || variances.size() != weights.size()) {
      throw ConfigError(where + ": weights, means and variances differ in length");
    }
    std::vector<IsotropicGaussian> comps;
    for (std::size_t k = 0; k < means.size(); ++k) {
      const auto m = numbers(means[k], where + ".means");
      if (static_cast<int>(m.size()) != dim) {
        throw ConfigError(where + ".means[" + std::to_string(k) + "] has wrong dimension");
      }
      comps.push_back({Eigen::Map<const Vec>(m.data(), dim), variances[k]});
    }
    targets.emplace_back(std::move(comps), weights);
  }
  auto prior = numbers(field(doc, "class_prior", "task"), "task.class_prior");
  return ClassConditionalTask(GaussianMixture::standard_normal(dim), std::move(targets),
                              std::move(prior));
}

ClassConditionalTask load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_task(buffer.str());
}

std::string task_to_json(const ClassConditionalTask& task) {
  json doc;
  doc["dim"] = task.dim();
  doc["classes"] = json::array();
  for (Label y = 0; y < task.num_classes(); ++y) {
    const auto& mix = task.target(y);
    json cls;
    cls["weights"] = mix.weights();
    cls["means"] = json::array();
    cls["variances"] = json::array();
    for (const auto& c : mix.components()) {
      cls["means"].push_back(std::vector<double>(c.mean.begin(), c.mean.end()));
      cls["variances"].push_back(c.variance);
    }
    doc["classes"].push_back(cls);
  }
  doc["class_prior"] = task.class_prior();
  return doc.dump(2);
}

}  // namespace flowguide
