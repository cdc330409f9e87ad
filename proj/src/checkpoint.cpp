// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowguide/errors.hpp"

namespace flowguide {
namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array()) throw FormatError(name, "expected a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 && j[0].is_array() ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw FormatError(name, "ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw FormatError(name, "expected numbers");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(path + key, "missing");
  return j.at(key);
}

int require_int(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_number_integer()) throw FormatError(path + key, "expected an integer");
  return v.get<int>();
}

}  // namespace

std::string checkpoint_to_json(const MLPVelocityModel& model, std::size_t epoch,
                               const std::string& config_hash) {
  const auto& shape = model.shape();
  json doc;
  doc["format"] = std::string(kCheckpointFormat);
  doc["epoch"] = epoch;
  doc["config_hash"] = config_hash;
  doc["dims"] = {{"input_dim", shape.input_dim},
                 {"hidden", shape.hidden},
                 {"num_classes", shape.num_classes},
                 {"embed_dim", shape.embed_dim},
                 {"time_features", kTimeFeatures}};
  json params;
  const auto& p = model.params();
  for (std::size_t l = 0; l < p.dense.size(); ++l) {
    const std::string name = "dense" + std::to_string(l);
    params[name + ".weight"] = matrix_to_json(p.dense[l].weight);
    params[name + ".bias"] = std::vector<double>(p.dense[l].bias.begin(), p.dense[l].bias.end());
  }
  params["embedding"] = matrix_to_json(p.embedding);
  doc["params"] = std::move(params);
  return doc.dump() + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("json", e.what());
  }
  const json& format = require(doc, "format", "");
  if (!format.is_string() || format.get<std::string>() != kCheckpointFormat) {
    throw FormatError("format", "expected \"" + std::string(kCheckpointFormat) + "\"");
  }
  const int epoch = require_int(doc, "epoch", "");
  if (epoch < 0) throw FormatError("epoch", "must be nonnegative");
  const json& hash = require(doc, "config_hash", "");
  if (!hash.is_string()) throw FormatError("config_hash", "expected a string");

  const json& dims = require(doc, "dims", "");
  ModelShape shape;
  shape.input_dim = require_int(dims, "input_dim", "dims.");
  shape.num_classes = require_int(dims, "num_classes", "dims.");
  shape.embed_dim = require_int(dims, "embed_dim", "dims.");
  if (require_int(dims, "time_features", "dims.") != kTimeFeatures) {
    throw FormatError("dims.time_features", "expected " + std::to_string(kTimeFeatures));
  }
  const json& hidden = require(dims, "hidden", "dims.");
  if (!hidden.is_array()) throw FormatError("dims.hidden", "expected an array");
  shape.hidden.clear();
  for (const auto& h : hidden) {
    if (!h.is_number_integer() || h.get<int>() < 1) throw FormatError("dims.hidden", "expected positive integers");
    shape.hidden.push_back(h.get<int>());
  }

  const json& params = require(doc, "params", "");
  Parameters p;
  for (std::size_t l = 0; l <= shape.hidden.size(); ++l) {
    const std::string name = "dense" + std::to_string(l);
    DenseLayer layer;
    layer.weight = matrix_from_json(require(params, name + ".weight", "params."), "params." + name + ".weight");
    const json& bias = require(params, name + ".bias", "params.");
    if (!bias.is_array()) throw FormatError("params." + name + ".bias", "expected an array");
    layer.bias.resize(static_cast<Eigen::Index>(bias.size()));
    for (std::size_t i = 0; i < bias.size(); ++i) {
      if (!bias[i].is_number()) throw FormatError("params." + name + ".bias", "expected numbers");
      layer.bias[static_cast<Eigen::Index>(i)] = bias[i].get<double>();
    }
    p.dense.push_back(std::move(layer));
  }
  p.embedding = matrix_from_json(require(params, "embedding", "params."), "params.embedding");
  return {static_cast<std::size_t>(epoch), hash.get<std::string>(),
          MLPVelocityModel(std::move(shape), std::move(p))};
}

void save_checkpoint(const std::filesystem::path& path, const MLPVelocityModel& model,
                     std::size_t epoch, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(model, epoch, config_hash);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("missing checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

}  // namespace flowguide
