// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "flowguide/errors.hpp"

namespace flowguide {
namespace {

constexpr double kWeightSumTolerance = 1e-12;

void validate_weights(const std::vector<double>& weights, const char* what) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError(std::string(what) + " must be finite and nonnegative");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > kWeightSumTolerance) {
    throw ConfigError(std::string(what) + " must sum to 1 (got " + std::to_string(sum) + ")");
  }
}

double log_gaussian(const Vec& x, const Vec& mean, double variance) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * variance) -
         0.5 * (x - mean).squaredNorm() / variance;
}

// Joint (source j, target k) quantities on the straight path at time t.
struct PairTerm {
  double log_weight;
  double coefficient;  // Cov(x1 - x0, x_t) / Var(x_t), scalar by isotropy
  std::size_t target_index;
  std::size_t source_index;
};

std::vector<PairTerm> pair_terms(const GaussianMixture& source,
                                 const GaussianMixture& target, const Vec& x,
                                 double t) {
  std::vector<PairTerm> terms;
  terms.reserve(source.size() * target.size());
  const double u = 1.0 - t;
  for (std::size_t j = 0; j < source.size(); ++j) {
    const double wj = source.weights()[j];
    if (wj <= 0.0) continue;
    const auto& sj = source.component(j);
    for (std::size_t k = 0; k < target.size(); ++k) {
      const double wk = target.weights()[k];
      if (wk <= 0.0) continue;
      const auto& tk = target.component(k);
      const double a = u * u * sj.variance + t * t * tk.variance;
      const Vec centre = u * sj.mean + t * tk.mean;
      terms.push_back({std::log(wj) + std::log(wk) + log_gaussian(x, centre, a),
                       (t * tk.variance - u * sj.variance) / a, k, j});
    }
  }
  return terms;
}

// Normalized pair posteriors; prior products when every term is non-finite.
std::vector<double> pair_posteriors(const std::vector<PairTerm>& terms,
                                    const GaussianMixture& source,
                                    const GaussianMixture& target) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (const auto& term : terms) {
    if (std::isfinite(term.log_weight)) max_log = std::max(max_log, term.log_weight);
  }
  std::vector<double> post(terms.size());
  if (!std::isfinite(max_log)) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      post[i] = source.weights()[terms[i].source_index] *
                target.weights()[terms[i].target_index];
    }
  } else {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      post[i] = std::isfinite(terms[i].log_weight) ? std::exp(terms[i].log_weight - max_log) : 0.0;
    }
  }
  const double total = std::accumulate(post.begin(), post.end(), 0.0);
  for (double& p : post) p /= total;
  return post;
}

// Streams single draws without materializing a batch.
class Drawer {
 public:
  explicit Drawer(const GaussianMixture& mixture)
      : mixture_(mixture),
        pick_(mixture.weights().begin(), mixture.weights().end()) {
    for (const auto& c : mixture.components()) scale_.push_back(std::sqrt(c.variance));
  }

  std::size_t draw(Rng& rng, Eigen::Ref<Vec> out) {
    const std::size_t k = mixture_.size() == 1 ? 0 : pick_(rng);
    const auto& c = mixture_.component(k);
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = c.mean[i] + scale_[k] * normal_(rng);
    return k;
  }

 private:
  const GaussianMixture& mixture_;
  std::discrete_distribution<std::size_t> pick_;
  std::normal_distribution<double> normal_;
  std::vector<double> scale_;
};

}  // namespace

GaussianMixture::GaussianMixture(std::vector<IsotropicGaussian> components,
                                 std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty()) throw ConfigError("mixture needs at least one component");
  if (components_.size() != weights_.size()) {
    throw ConfigError("mixture has " + std::to_string(components_.size()) +
                      " components but " + std::to_string(weights_.size()) + " weights");
  }
  validate_weights(weights_, "mixture weights");
  const auto d = components_.front().mean.size();
  if (d == 0) throw ConfigError("mixture dimension must be positive");
  for (const auto& c : components_) {
    if (c.mean.size() != d) throw ConfigError("mixture components differ in dimension");
    if (!(c.variance > 0.0) || !std::isfinite(c.variance)) {
      throw ConfigError("component variance must be positive");
    }
    if (!c.mean.allFinite()) throw ConfigError("component mean must be finite");
  }
}

GaussianMixture GaussianMixture::standard_normal(int dim) {
  return single(Vec::Zero(dim), 1.0);
}

GaussianMixture GaussianMixture::single(Vec mean, double variance) {
  return GaussianMixture({IsotropicGaussian{std::move(mean), variance}}, {1.0});
}

Vec GaussianMixture::mean() const {
  Vec m = Vec::Zero(dim());
  for (std::size_t k = 0; k < size(); ++k) m += weights_[k] * components_[k].mean;
  return m;
}

Batch GaussianMixture::sample(std::size_t count, Rng& rng,
                              std::vector<std::size_t>& assignment) const {
  Batch out(dim(), static_cast<Eigen::Index>(count));
  assignment.resize(count);
  Drawer drawer(*this);
  for (std::size_t i = 0; i < count; ++i) {
    assignment[i] = drawer.draw(rng, out.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

Batch GaussianMixture::sample(std::size_t count, Rng& rng) const {
  std::vector<std::size_t> unused;
  return sample(count, rng, unused);
}

Batch GaussianMixture::sample(std::size_t count, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(count, rng);
}

double GaussianMixture::log_density(const Vec& x) const {
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  logs.reserve(size());
  for (std::size_t k = 0; k < size(); ++k) {
    if (weights_[k] <= 0.0) continue;
    logs.push_back(std::log(weights_[k]) +
                   log_gaussian(x, components_[k].mean, components_[k].variance));
    max_log = std::max(max_log, logs.back());
  }
  if (!std::isfinite(max_log)) return max_log;
  double sum = 0.0;
  for (double l : logs) sum += std::exp(l - max_log);
  return max_log + std::log(sum);
}

std::vector<double> path_responsibilities(const GaussianMixture& source,
                                          const GaussianMixture& target,
                                          const Vec& x, double t) {
  const auto terms = pair_terms(source, target, x, t);
  const auto post = pair_posteriors(terms, source, target);
  std::vector<double> gamma(target.size(), 0.0);
  for (std::size_t i = 0; i < terms.size(); ++i) gamma[terms[i].target_index] += post[i];
  return gamma;
}

std::vector<double> path_responsibilities(const GaussianMixture& target,
                                          const Vec& x, double t) {
  return path_responsibilities(GaussianMixture::standard_normal(target.dim()), target, x, t);
}

Vec optimal_velocity(const GaussianMixture& source, const GaussianMixture& target,
                     const Vec& x, double t) {
  const auto terms = pair_terms(source, target, x, t);
  const auto post = pair_posteriors(terms, source, target);
  const double u = 1.0 - t;
  Vec v = Vec::Zero(x.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& m = source.component(terms[i].source_index).mean;
    const auto& mu = target.component(terms[i].target_index).mean;
    v += post[i] * ((mu - m) + terms[i].coefficient * (x - u * m - t * mu));
  }
  return v;
}

Vec optimal_velocity(const GaussianMixture& target, const Vec& x, double t) {
  return optimal_velocity(GaussianMixture::standard_normal(target.dim()), target, x, t);
}

McEstimate mc_velocity_oracle(const GaussianMixture& source,
                              const GaussianMixture& target, const Vec& x,
                              double t, const McOptions& options) {
  if (options.n_samples < 2) throw ConfigError("mc oracle needs at least 2 samples");
  if (!(options.bandwidth > 0.0)) throw ConfigError("mc oracle bandwidth must be positive");
  if (t < 0.0 || t > 1.0) throw ConfigError("t must lie in [0, 1]");

  const auto d = x.size();
  Rng rng(options.seed);
  const auto n = static_cast<double>(options.n_samples);

  // Endpoints: one side of the pair is pinned to x exactly.
  if (t == 0.0 || t == 1.0) {
    Drawer drawer(t == 0.0 ? target : source);
    Vec draw(d), sum = Vec::Zero(d), sum_sq = Vec::Zero(d);
    for (std::size_t i = 0; i < options.n_samples; ++i) {
      drawer.draw(rng, draw);
      sum += draw;
      sum_sq += draw.cwiseProduct(draw);
    }
    const Vec mean = sum / n;
    const Vec var = ((sum_sq / n) - mean.cwiseProduct(mean)) * (n / (n - 1.0));
    McEstimate est;
    est.value = t == 0.0 ? Vec(mean - x) : Vec(x - mean);
    est.standard_error = (var / n).cwiseMax(0.0).cwiseSqrt();
    est.effective_samples = n;
    return est;
  }

  Drawer draw_source(source);
  Drawer draw_target(target);
  Vec x0(d), x1(d), offset(d);
  const double inv_two_h2 = 1.0 / (2.0 * options.bandwidth * options.bandwidth);
  // Kernel weights below exp(-60) do not affect any double-precision sum here.
  const double cutoff = 60.0;
  // Pairs inside the window: offset x_t - x, displacement, weight.
  std::vector<Vec> offsets, disps;
  std::vector<double> weights;
  double w_sum = 0.0, w2_sum = 0.0;
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    draw_source.draw(rng, x0);
    draw_target.draw(rng, x1);
    offset = (1.0 - t) * x0 + t * x1 - x;
    const double e = offset.squaredNorm() * inv_two_h2;
    if (e > cutoff) continue;
    const double w = std::exp(-e);
    w_sum += w;
    w2_sum += w * w;
    offsets.push_back(offset);
    disps.push_back(x1 - x0);
    weights.push_back(w);
  }
  const double n_eff = w_sum > 0.0 ? w_sum * w_sum / w2_sum : 0.0;
  if (n_eff < options.min_effective_samples) throw InsufficientSupportError(n_eff);

  // Weighted least squares of disp on [1, offset]. The local-constant fit
  // keeps only the intercept column and reduces to the weighted mean.
  const std::size_t m = weights.size();
  const Eigen::Index p = options.local_linear ? d + 1 : 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(p, d);
  Vec z(p);
  auto design = [&](std::size_t i) {
    z[0] = 1.0;
    if (p > 1) z.tail(d) = offsets[i];
  };
  for (std::size_t i = 0; i < m; ++i) {
    design(i);
    a.noalias() += weights[i] * z * z.transpose();
    b.noalias() += weights[i] * z * disps[i].transpose();
  }
  const auto solver = a.ldlt();
  const Eigen::MatrixXd beta = solver.solve(b);
  // The intercept is sum_i l_i disp_i with l_i = w_i e0' A^{-1} z_i.
  const Vec row = solver.solve(Vec::Unit(p, 0));

  McEstimate est;
  est.value = beta.row(0).transpose();
  // Sandwich variance sum_i l_i^2 r_i^2 with residuals of the fit.
  Vec var = Vec::Zero(d);
  for (std::size_t i = 0; i < m; ++i) {
    design(i);
    const double l = weights[i] * row.dot(z);
    const Vec r = disps[i] - beta.transpose() * z;
    var += (l * l) * r.cwiseProduct(r);
  }
  est.standard_error = var.cwiseSqrt();
  est.effective_samples = n_eff;
  return est;
}

McEstimate mc_velocity_oracle(const GaussianMixture& target, const Vec& x,
                              double t, const McOptions& options) {
  return mc_velocity_oracle(GaussianMixture::standard_normal(target.dim()), target, x,
                            t, options);
}

namespace {

GaussianMixture build_marginal(const std::vector<GaussianMixture>& targets,
                               const std::vector<double>& prior) {
  std::vector<IsotropicGaussian> comps;
  std::vector<double> weights;
  for (std::size_t c = 0; c < targets.size(); ++c) {
    for (std::size_t k = 0; k < targets[c].size(); ++k) {
      comps.push_back(targets[c].component(k));
      weights.push_back(prior[c] * targets[c].weights()[k]);
    }
  }
  // Renormalize against rounding in the products.
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  return GaussianMixture(std::move(comps), std::move(weights));
}

GaussianMixture validated_marginal(const std::vector<GaussianMixture>& targets,
                                   const std::vector<double>& prior) {
  if (targets.empty()) throw ConfigError("task needs at least one class");
  if (prior.size() != targets.size()) {
    throw ConfigError("class_prior length does not match the number of classes");
  }
  validate_weights(prior, "class_prior");
  return build_marginal(targets, prior);
}

}  // namespace

ClassConditionalTask::ClassConditionalTask(GaussianMixture source,
                                           std::vector<GaussianMixture> class_targets,
                                           std::vector<double> class_prior)
    : source_(std::move(source)),
      targets_(std::move(class_targets)),
      prior_(std::move(class_prior)),
      marginal_(validated_marginal(targets_, prior_)) {
  for (const auto& target : targets_) {
    if (target.dim() != source_.dim()) {
      throw ConfigError("class target dimension differs from source dimension");
    }
  }
}

const GaussianMixture& ClassConditionalTask::target(Label y) const {
  if (y == kNullLabel) return marginal_;
  if (y < 0 || y >= num_classes()) {
    throw ConfigError("unknown class label " + std::to_string(y));
  }
  return targets_[static_cast<std::size_t>(y)];
}

CondUncond conditional_and_marginal_velocities(const ClassConditionalTask& task,
                                               const Vec& x, double t, Label y) {
  if (y == kNullLabel) throw ConfigError("conditional velocity needs a class label");
  return {optimal_velocity(task.source(), task.target(y), x, t),
          optimal_velocity(task.source(), task.marginal(), x, t)};
}

ClassConditionalTask default_task() {
  constexpr int kClasses = 2;
  constexpr int kPerClass = 4;
  constexpr double kRadius = 4.0;
  constexpr double kVariance = 0.09;
  std::vector<GaussianMixture> targets;
  for (int c = 0; c < kClasses; ++c) {
    std::vector<IsotropicGaussian> comps;
    for (int k = 0; k < kPerClass; ++k) {
      // Classes interleave around the circle.
      const double angle = 2.0 * std::numbers::pi * (kClasses * k + c) / (kClasses * kPerClass);
      Vec mean(2);
      mean << kRadius * std::cos(angle), kRadius * std::sin(angle);
      comps.push_back({mean, kVariance});
    }
    targets.emplace_back(std::move(comps), std::vector<double>(kPerClass, 1.0 / kPerClass));
  }
  return ClassConditionalTask(GaussianMixture::standard_normal(2), std::move(targets),
                              std::vector<double>(kClasses, 1.0 / kClasses));
}

}  // namespace flowguide
