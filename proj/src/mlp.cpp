// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "flowguide/errors.hpp"

namespace flowguide {
namespace {

constexpr double kFrequencies[] = {1.0, 2.0, 4.0, 8.0};

// Assembles the [x; time features; embedding] input matrix.
Eigen::MatrixXd build_input(const MLPVelocityModel& model, const Batch& x,
                            std::span<const double> t, std::span<const Label> y,
                            std::vector<Eigen::Index>* columns = nullptr) {
  const auto& shape = model.shape();
  const Eigen::Index n = x.cols();
  if (x.rows() != shape.input_dim) {
    throw ConfigError("input has dimension " + std::to_string(x.rows()) + ", model expects " +
                      std::to_string(shape.input_dim));
  }
  if (static_cast<Eigen::Index>(t.size()) != n || static_cast<Eigen::Index>(y.size()) != n) {
    throw ConfigError("batch sizes of x, t and y disagree");
  }
  Eigen::MatrixXd in(shape.feature_dim(), n);
  in.topRows(shape.input_dim) = x;
  if (columns) columns->resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto col = model.embedding_column(y[static_cast<std::size_t>(i)]);
    if (columns) (*columns)[static_cast<std::size_t>(i)] = col;
    in.block(shape.input_dim, i, kTimeFeatures, 1) = time_features(t[static_cast<std::size_t>(i)]);
    in.block(shape.input_dim + kTimeFeatures, i, shape.embed_dim, 1) =
        model.params().embedding.col(col);
  }
  return in;
}

// tanh(z) = 1 - 2 / (1 + exp(2z)); Eigen vectorizes exp but not tanh for
// doubles. Absolute error stays below 1e-15.
Eigen::MatrixXd tanh_activation(const Eigen::MatrixXd& z) {
  return (1.0 - 2.0 / (1.0 + (2.0 * z.array()).exp())).matrix();
}

// Runs the network, keeping every layer's output (activations[0] is the input).
Batch run(const Parameters& p, Eigen::MatrixXd input, std::vector<Eigen::MatrixXd>* activations) {
  Eigen::MatrixXd h = std::move(input);
  const std::size_t last = p.dense.size() - 1;
  for (std::size_t l = 0; l < p.dense.size(); ++l) {
    Eigen::MatrixXd z = p.dense[l].weight * h;
    z.colwise() += p.dense[l].bias;
    if (l != last) z = tanh_activation(z);
    if (activations) activations->push_back(std::move(h));
    h = std::move(z);
  }
  return h;
}

// Column blocks keep the hidden activations cache-resident for large batches.
Batch run_blocked(const Parameters& p, const Eigen::MatrixXd& input) {
  constexpr Eigen::Index kBlock = 256;
  const Eigen::Index n = input.cols();
  if (n <= kBlock) return run(p, input, nullptr);
  Batch out(p.dense.back().weight.rows(), n);
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index width = std::min(kBlock, n - start);
    out.middleCols(start, width) = run(p, input.middleCols(start, width), nullptr);
  }
  return out;
}

void check_shape(const ModelShape& shape, const Parameters& params) {
  if (shape.input_dim < 1) throw FormatError("dims.input_dim", "must be positive");
  if (shape.num_classes < 1) throw FormatError("dims.num_classes", "must be positive");
  if (shape.embed_dim < 0) throw FormatError("dims.embed_dim", "must be nonnegative");
  if (params.dense.size() != shape.hidden.size() + 1) {
    throw FormatError("params", "expected " + std::to_string(shape.hidden.size() + 1) +
                                    " dense layers, found " + std::to_string(params.dense.size()));
  }
  int fan_in = shape.feature_dim();
  for (std::size_t l = 0; l < params.dense.size(); ++l) {
    const int fan_out = l < shape.hidden.size() ? shape.hidden[l] : shape.input_dim;
    const auto& layer = params.dense[l];
    const std::string name = "params.dense" + std::to_string(l);
    if (layer.weight.rows() != fan_out || layer.weight.cols() != fan_in) {
      throw FormatError(name + ".weight", "shape mismatch");
    }
    if (layer.bias.size() != fan_out) throw FormatError(name + ".bias", "shape mismatch");
    fan_in = fan_out;
  }
  if (params.embedding.rows() != shape.embed_dim ||
      params.embedding.cols() != shape.num_classes + 1) {
    throw FormatError("params.embedding", "shape mismatch");
  }
}

}  // namespace

Vec time_features(double t) {
  Vec f(kTimeFeatures);
  f[0] = t;
  for (int i = 0; i < 4; ++i) {
    const double phase = 2.0 * std::numbers::pi * kFrequencies[i] * t;
    f[1 + 2 * i] = std::sin(phase);
    f[2 + 2 * i] = std::cos(phase);
  }
  return f;
}

Parameters Parameters::zeros_like(const Parameters& other) {
  Parameters p;
  for (const auto& layer : other.dense) {
    p.dense.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                       Vec::Zero(layer.bias.size())});
  }
  p.embedding = Eigen::MatrixXd::Zero(other.embedding.rows(), other.embedding.cols());
  return p;
}

std::vector<std::span<double>> Parameters::arrays() {
  std::vector<std::span<double>> out;
  for (auto& layer : dense) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  out.emplace_back(embedding.data(), static_cast<std::size_t>(embedding.size()));
  return out;
}

std::vector<std::span<const double>> Parameters::arrays() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : dense) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  out.emplace_back(embedding.data(), static_cast<std::size_t>(embedding.size()));
  return out;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& a : arrays()) n += a.size();
  return n;
}

bool Parameters::all_finite() const {
  for (const auto& layer : dense) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return embedding.allFinite();
}

MLPVelocityModel::MLPVelocityModel(ModelShape shape, std::uint64_t seed)
    : shape_(std::move(shape)) {
  Rng rng(seed);
  int fan_in = shape_.feature_dim();
  for (std::size_t l = 0; l <= shape_.hidden.size(); ++l) {
    const bool output = l == shape_.hidden.size();
    const int fan_out = output ? shape_.input_dim : shape_.hidden[l];
    DenseLayer layer{Eigen::MatrixXd::Zero(fan_out, fan_in), Vec::Zero(fan_out)};
    if (!output) {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> uniform(-limit, limit);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = uniform(rng);
      }
    }
    params_.dense.push_back(std::move(layer));
    fan_in = fan_out;
  }
  params_.embedding.resize(shape_.embed_dim, shape_.num_classes + 1);
  std::normal_distribution<double> normal;
  for (Eigen::Index j = 0; j < params_.embedding.cols(); ++j) {
    for (Eigen::Index i = 0; i < params_.embedding.rows(); ++i) params_.embedding(i, j) = normal(rng);
  }
  check_shape(shape_, params_);
}

MLPVelocityModel::MLPVelocityModel(ModelShape shape, Parameters params)
    : shape_(std::move(shape)), params_(std::move(params)) {
  check_shape(shape_, params_);
}

Eigen::Index MLPVelocityModel::embedding_column(Label y) const {
  if (y == kNullLabel) return shape_.num_classes;
  if (y < 0 || y >= shape_.num_classes) {
    throw ConfigError("label " + std::to_string(y) + " out of range");
  }
  return y;
}

Batch MLPVelocityModel::forward(const Batch& x, std::span<const double> t,
                                std::span<const Label> y) const {
  return run_blocked(params_, build_input(*this, x, t, y));
}

Batch MLPVelocityModel::forward(const Batch& x, double t, Label y) const {
  if (x.rows() != shape_.input_dim) {
    throw ConfigError("input has dimension " + std::to_string(x.rows()) + ", model expects " +
                      std::to_string(shape_.input_dim));
  }
  Eigen::MatrixXd in(shape_.feature_dim(), x.cols());
  in.topRows(shape_.input_dim) = x;
  in.middleRows(shape_.input_dim, kTimeFeatures).colwise() = time_features(t);
  in.bottomRows(shape_.embed_dim).colwise() = params_.embedding.col(embedding_column(y));
  return run_blocked(params_, in);
}

namespace {

Batch interpolate(const CfmBatch& batch) {
  if (batch.x0.rows() != batch.x1.rows() || batch.x0.cols() != batch.x1.cols()) {
    throw ConfigError("x0 and x1 batches differ in shape");
  }
  Batch xt(batch.x0.rows(), batch.x0.cols());
  for (Eigen::Index i = 0; i < xt.cols(); ++i) {
    const double t = batch.t[static_cast<std::size_t>(i)];
    if (t < 0.0 || t > 1.0) throw ConfigError("t must lie in [0, 1]");
    xt.col(i) = (1.0 - t) * batch.x0.col(i) + t * batch.x1.col(i);
  }
  return xt;
}

}  // namespace

double cfm_loss(const MLPVelocityModel& model, const CfmBatch& batch) {
  const Batch xt = interpolate(batch);
  const Batch out = model.forward(xt, batch.t, batch.y);
  return (out - (batch.x1 - batch.x0)).colwise().squaredNorm().mean();
}

LossAndGradients cfm_loss_and_gradients(const MLPVelocityModel& model, const CfmBatch& batch,
                                        std::size_t step_index) {
  const Batch xt = interpolate(batch);
  std::vector<Eigen::Index> columns;
  std::vector<Eigen::MatrixXd> acts;
  const auto& p = model.params();
  const Batch out = run(p, build_input(model, xt, batch.t, batch.y, &columns), &acts);

  const double n = static_cast<double>(out.cols());
  const Batch resid = out - (batch.x1 - batch.x0);
  LossAndGradients result;
  result.loss = resid.colwise().squaredNorm().sum() / n;
  if (!std::isfinite(result.loss)) throw DivergedError(step_index, "diverged: non-finite CFM loss");

  result.gradients = Parameters::zeros_like(p);
  auto& g = result.gradients;
  // delta holds dLoss/dz for the current layer's pre-activation.
  Eigen::MatrixXd delta = (2.0 / n) * resid;
  for (std::size_t l = p.dense.size(); l-- > 0;) {
    const auto& h = acts[l];
    g.dense[l].weight.noalias() = delta * h.transpose();
    g.dense[l].bias = delta.rowwise().sum();
    Eigen::MatrixXd dh = p.dense[l].weight.transpose() * delta;
    if (l > 0) {
      // h = tanh(z) for every hidden layer.
      delta = (dh.array() * (1.0 - h.array().square())).matrix();
    } else {
      const int offset = model.shape().input_dim + kTimeFeatures;
      const int width = model.shape().embed_dim;
      for (Eigen::Index i = 0; i < dh.cols(); ++i) {
        g.embedding.col(columns[static_cast<std::size_t>(i)]) += dh.block(offset, i, width, 1);
      }
    }
  }
  return result;
}

AdamState AdamState::for_model(const MLPVelocityModel& model) {
  return {Parameters::zeros_like(model.params()), Parameters::zeros_like(model.params()), 0};
}

void adam_step(MLPVelocityModel& model, const Parameters& gradients, AdamState& state,
               const AdamConfig& config) {
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, step);
  const double correct2 = 1.0 - std::pow(config.beta2, step);
  auto params = model.params().arrays();
  const auto grads = gradients.arrays();
  auto m = state.first_moment.arrays();
  auto v = state.second_moment.arrays();
  if (grads.size() != params.size()) throw ConfigError("gradient layout does not match model");
  for (std::size_t a = 0; a < params.size(); ++a) {
    if (grads[a].size() != params[a].size()) throw ConfigError("gradient layout does not match model");
    for (std::size_t i = 0; i < params[a].size(); ++i) {
      const double gi = grads[a][i];
      m[a][i] = config.beta1 * m[a][i] + (1.0 - config.beta1) * gi;
      v[a][i] = config.beta2 * v[a][i] + (1.0 - config.beta2) * gi * gi;
      const double m_hat = m[a][i] / correct1;
      const double v_hat = v[a][i] / correct2;
      params[a][i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

}  // namespace flowguide
