// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowguide/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "flowguide/errors.hpp"

namespace flowguide {
namespace {

constexpr double kLogFloor = 1e-12;
constexpr double kClipWarnFraction = 0.01;

std::size_t bin_index(double v, const HistogramGrid& grid, bool& outside) {
  const double pos = std::floor((v + grid.radius) / grid.bin_width());
  if (!(pos >= 0.0)) {
    outside = true;
    return 0;
  }
  if (pos >= static_cast<double>(grid.bins)) {
    outside = true;
    return grid.bins - 1;
  }
  return static_cast<std::size_t>(pos);
}

double kl_to_mixture(std::span<const double> p, const std::vector<double>& m) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(std::max(p[i], kLogFloor)) - std::log(std::max(m[i], kLogFloor)));
  }
  return kl;
}

}  // namespace

std::vector<double> sample_histogram(const Batch& samples, const HistogramGrid& grid,
                                     double* outside_fraction) {
  if (samples.rows() != 2) throw ConfigError("histogram JSD requires 2-D samples");
  if (samples.cols() == 0) throw ConfigError("histogram needs at least one sample");
  std::vector<double> hist(grid.bins * grid.bins, 0.0);
  std::size_t outside = 0;
  for (Eigen::Index i = 0; i < samples.cols(); ++i) {
    bool out = false;
    const std::size_t ix = bin_index(samples(0, i), grid, out);
    const std::size_t iy = bin_index(samples(1, i), grid, out);
    if (out) ++outside;
    hist[ix * grid.bins + iy] += 1.0;
  }
  const double n = static_cast<double>(samples.cols());
  for (double& h : hist) h /= n;
  if (outside_fraction) *outside_fraction = static_cast<double>(outside) / n;
  return hist;
}

std::vector<double> target_histogram(const GaussianMixture& target, const HistogramGrid& grid) {
  if (target.dim() != 2) throw ConfigError("histogram JSD requires a 2-D target");
  std::vector<double> hist(grid.bins * grid.bins);
  const double area = grid.bin_width() * grid.bin_width();
  Vec centre(2);
  for (std::size_t ix = 0; ix < grid.bins; ++ix) {
    for (std::size_t iy = 0; iy < grid.bins; ++iy) {
      centre << grid.bin_centre(ix), grid.bin_centre(iy);
      hist[ix * grid.bins + iy] = std::exp(target.log_density(centre)) * area;
    }
  }
  const double total = std::accumulate(hist.begin(), hist.end(), 0.0);
  if (!(total > 0.0)) throw ConfigError("target has no mass on the histogram grid");
  for (double& h : hist) h /= total;
  return hist;
}

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ConfigError("histograms differ in size");
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  const double jsd = 0.5 * kl_to_mixture(p, m) + 0.5 * kl_to_mixture(q, m);
  return std::clamp(jsd, 0.0, std::numbers::ln2);
}

JsdResult jsd_to_target(const Batch& samples, const GaussianMixture& target,
                        const HistogramGrid& grid) {
  if (samples.cols() < 1000) throw ConfigError("jsd_to_target needs at least 1000 samples");
  JsdResult result;
  const auto p = sample_histogram(samples, grid, &result.outside_fraction);
  const auto q = target_histogram(target, grid);
  result.value = jensen_shannon(p, q);
  result.clipped_warning = result.outside_fraction > kClipWarnFraction;
  return result;
}

VelocityError velocity_error_at_zero(const VelocitySource& source, const GuidanceSpec& spec,
                                     const ClassConditionalTask& task, Label y,
                                     std::uint64_t probe_seed, std::size_t n_probes) {
  if (n_probes == 0) throw ConfigError("velocity_error_at_zero needs probes");
  const Batch probes = task.source().sample(n_probes, probe_seed);
  const Batch v_cond = source.conditional(probes, 0.0, y);
  const Batch guided = spec.strategy == Strategy::kConditional || spec.omega == 1.0
                           ? v_cond
                           : guided_velocity(spec, v_cond, source.unconditional(probes, 0.0),
                                             spec.gated_steps());
  const Batch truth = AnalyticVelocity(task).conditional(probes, 0.0, y);
  VelocityError err;
  err.error_norm = (guided - truth).colwise().norm().mean();
  err.ground_truth_norm = truth.colwise().norm().mean();
  return err;
}

SummaryStats summary_stats(const Batch& samples, const GaussianMixture* mixture) {
  if (samples.cols() < 2) throw ConfigError("summary_stats needs at least two samples");
  SummaryStats stats;
  const double n = static_cast<double>(samples.cols());
  stats.mean = samples.rowwise().mean();
  const Batch centred = samples.colwise() - stats.mean;
  stats.covariance = centred * centred.transpose() / (n - 1.0);
  if (mixture) {
    stats.mode_fractions.assign(mixture->size(), 0.0);
    for (Eigen::Index i = 0; i < samples.cols(); ++i) {
      std::size_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < mixture->size(); ++k) {
        const double dist = (samples.col(i) - mixture->component(k).mean).squaredNorm();
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      stats.mode_fractions[best] += 1.0;
    }
    for (double& f : stats.mode_fractions) f /= n;
  }
  return stats;
}

}  // namespace flowguide
