// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flowguide/rng.hpp"

namespace flowguide {

using Vec = Eigen::VectorXd;
/// A batch of d-vectors stored column-wise (d x N).
using Batch = Eigen::MatrixXd;

/// Class label; kNullLabel is the null condition.
using Label = int;
inline constexpr Label kNullLabel = -1;

struct IsotropicGaussian {
  Vec mean;
  double variance = 1.0;  // covariance = variance * I
};

/// Weighted mixture of isotropic Gaussians sharing one ambient dimension.
class GaussianMixture {
 public:
  /// Throws ConfigError when weights are negative, do not sum to one within
  /// 1e-12, dimensions disagree, a variance is non-positive or the list is
  /// empty.
  GaussianMixture(std::vector<IsotropicGaussian> components,
                  std::vector<double> weights);

  static GaussianMixture standard_normal(int dim);
  static GaussianMixture single(Vec mean, double variance = 1.0);

  int dim() const { return static_cast<int>(components_.front().mean.size()); }
  std::size_t size() const { return components_.size(); }
  const IsotropicGaussian& component(std::size_t k) const { return components_[k]; }
  const std::vector<IsotropicGaussian>& components() const { return components_; }
  const std::vector<double>& weights() const { return weights_; }

  Vec mean() const;

  /// `count` i.i.d. draws, one per column.
  Batch sample(std::size_t count, Rng& rng) const;
  Batch sample(std::size_t count, std::uint64_t seed) const;
  /// Draws and also reports the generating component of each column.
  Batch sample(std::size_t count, Rng& rng, std::vector<std::size_t>& assignment) const;

  /// log sum_k w_k N(x; mu_k, sigma_k^2 I), max-shifted.
  double log_density(const Vec& x) const;

 private:
  std::vector<IsotropicGaussian> components_;
  std::vector<double> weights_;
};

/// Posterior over target components given x_t = x on the straight path
/// x_t = (1-t) x0 + t x1 from `source` to `target`. Pairs of source and
/// target components are jointly Gaussian; the result marginalizes the
/// source component. Falls back to the prior weights when every
/// log-likelihood is non-finite.
std::vector<double> path_responsibilities(const GaussianMixture& source,
                                          const GaussianMixture& target,
                                          const Vec& x, double t);
/// Same, with a standard normal source.
std::vector<double> path_responsibilities(const GaussianMixture& target,
                                          const Vec& x, double t);

/// E[x1 - x0 | x_t = x]. Per pair (source j, target k) the conditional
/// expectation is
///   (mu_k - m_j) + c_jk (x - (1-t) m_j - t mu_k),
///   c_jk = (t sigma_k^2 - (1-t) s_j^2) / ((1-t)^2 s_j^2 + t^2 sigma_k^2),
/// weighted by the pair posterior.
Vec optimal_velocity(const GaussianMixture& source, const GaussianMixture& target,
                     const Vec& x, double t);
/// Same, with a standard normal source.
Vec optimal_velocity(const GaussianMixture& target, const Vec& x, double t);

struct McEstimate {
  Vec value;
  Vec standard_error;
  double effective_samples = 0.0;
};

struct McOptions {
  std::size_t n_samples = 1'000'000;
  double bandwidth = 0.05;
  std::uint64_t seed = 0;
  double min_effective_samples = 100.0;
  /// Fit a kernel-weighted linear model in x_t - x and report its intercept.
  /// This cancels the first-order smoothing bias of the plain weighted mean,
  /// which dominates the standard error near sharp modes.
  bool local_linear = true;
};

/// Brute-force estimate of E[x1 - x0 | x_t ~= x]: samples pairs, forms x_t
/// and regresses the displacements under a Gaussian kernel centred at x.
/// At t = 0 and t = 1 the endpoint is known exactly and only the other side
/// is sampled. Throws InsufficientSupportError when the kernel window holds
/// fewer than `min_effective_samples` effective pairs.
McEstimate mc_velocity_oracle(const GaussianMixture& source,
                              const GaussianMixture& target, const Vec& x,
                              double t, const McOptions& options);
McEstimate mc_velocity_oracle(const GaussianMixture& target, const Vec& x,
                              double t, const McOptions& options);

/// Source distribution, one target mixture per class label and a class prior.
/// The null condition corresponds to the prior-weighted marginal of the
/// class targets.
class ClassConditionalTask {
 public:
  ClassConditionalTask(GaussianMixture source, std::vector<GaussianMixture> class_targets,
                       std::vector<double> class_prior);

  int dim() const { return source_.dim(); }
  int num_classes() const { return static_cast<int>(targets_.size()); }
  const GaussianMixture& source() const { return source_; }
  /// Throws ConfigError for an unknown label; kNullLabel yields the marginal.
  const GaussianMixture& target(Label y) const;
  const GaussianMixture& marginal() const { return marginal_; }
  const std::vector<double>& class_prior() const { return prior_; }

 private:
  GaussianMixture source_;
  std::vector<GaussianMixture> targets_;
  std::vector<double> prior_;
  GaussianMixture marginal_;
};

struct CondUncond {
  Vec cond;
  Vec uncond;
};

/// Ground-truth conditional velocity for label y and unconditional velocity
/// of the marginal mixture. The latter uses marginal responsibilities and is
/// not the prior average of the class velocities.
CondUncond conditional_and_marginal_velocities(const ClassConditionalTask& task,
                                               const Vec& x, double t, Label y);

/// Two classes of four components each on a circle of radius 4, variance
/// 0.09, equal weights and equal class prior; source N(0, I) in R^2.
ClassConditionalTask default_task();

/// Loads {"dim", "classes": [{"weights", "means", "variances"}], "class_prior"}.
/// The source is always N(0, I).
ClassConditionalTask load_task(const std::filesystem::path& path);
ClassConditionalTask parse_task(const std::string& json_text);
std::string task_to_json(const ClassConditionalTask& task);

}  // namespace flowguide
