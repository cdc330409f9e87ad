// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flowguide/gmm.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/velocity_source.hpp"

namespace flowguide {

/// Uniform bins x bins grid over [-radius, radius]^2.
struct HistogramGrid {
  double radius = 6.0;
  std::size_t bins = 100;

  double bin_width() const { return 2.0 * radius / static_cast<double>(bins); }
  double bin_centre(std::size_t i) const { return -radius + (static_cast<double>(i) + 0.5) * bin_width(); }
};

/// Normalized sample histogram, row-major over (x index, y index). Samples
/// outside the grid are clipped into the boundary bins; their share of the
/// total is written to `outside_fraction` when given.
std::vector<double> sample_histogram(const Batch& samples, const HistogramGrid& grid,
                                     double* outside_fraction = nullptr);
/// Mixture density at bin centres times bin area, renormalized.
std::vector<double> target_histogram(const GaussianMixture& target, const HistogramGrid& grid);

/// JSD = KL(P||M)/2 + KL(Q||M)/2 with M = (P + Q)/2, natural log, 1e-12
/// floor inside the logs. Clamped to [0, ln 2].
double jensen_shannon(std::span<const double> p, std::span<const double> q);

struct JsdResult {
  double value = 0.0;
  double outside_fraction = 0.0;
  /// Set when more than 1% of the samples fell outside the grid.
  bool clipped_warning = false;
};

/// Histogram JSD between 2-D samples and a target mixture. Requires d = 2
/// and at least 1000 samples (ConfigError otherwise).
JsdResult jsd_to_target(const Batch& samples, const GaussianMixture& target,
                        const HistogramGrid& grid = {});

struct VelocityError {
  double error_norm = 0.0;         // mean ||v_guided(x, 0) - v*(x, 0 | y)||
  double ground_truth_norm = 0.0;  // mean ||v*(x, 0 | y)||, the all-zero baseline
};

/// Compares the guided velocity at t = 0 with the optimal conditional
/// velocity on probes drawn from the source. The zero-init gate is not
/// applied: the error is that of the velocity the guidance would use.
VelocityError velocity_error_at_zero(const VelocitySource& source, const GuidanceSpec& spec,
                                     const ClassConditionalTask& task, Label y,
                                     std::uint64_t probe_seed, std::size_t n_probes = 512);

struct SummaryStats {
  Vec mean;
  Eigen::MatrixXd covariance;  // unbiased
  /// Fraction of samples whose nearest component mean is component k.
  std::vector<double> mode_fractions;
};

/// Requires at least two samples. Mode fractions are filled only when a
/// mixture is supplied.
SummaryStats summary_stats(const Batch& samples, const GaussianMixture* mixture = nullptr);

}  // namespace flowguide
