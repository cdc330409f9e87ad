// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "flowguide/errors.hpp"
#include "flowguide/metrics.hpp"
#include "flowguide/mlp.hpp"

using namespace flowguide;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double plogp_ratio(double a, double m) { return a > 0 ? a * std::log(a / m) : 0.0; }

}  // namespace

TEST_CASE("jensen_shannon: identical, disjoint, symmetric") {
  const std::vector<double> p{0.5, 0.5, 0.0, 0.0};
  const std::vector<double> q{0.0, 0.0, 0.25, 0.75};
  const std::vector<double> r{0.1, 0.2, 0.3, 0.4};
  CHECK(jensen_shannon(p, p) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(jensen_shannon(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(jensen_shannon(p, r) == jensen_shannon(r, p));
  const std::vector<double> rp{0.4, 0.3, 0.2, 0.1};
  const std::vector<double> pp{0.0, 0.0, 0.5, 0.5};
  CHECK(jensen_shannon(rp, pp) == doctest::Approx(jensen_shannon(r, p)).epsilon(1e-14));
}

TEST_CASE("jsd_to_target: samples from the target itself") {
  const auto target = default_task().target(0);
  const auto r = jsd_to_target(target.sample(100000, 5), target);
  CHECK(r.value < 0.02);
  CHECK_FALSE(r.clipped_warning);
}

TEST_CASE("jsd_to_target: disjoint corners give ln 2") {
  Batch samples(2, 2000);
  samples.row(0).setConstant(-5.9);
  samples.row(1).setConstant(-5.9);
  const auto target = GaussianMixture::single(vec2(5.0, 5.0), 0.01);
  CHECK(jsd_to_target(samples, target).value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("jsd_to_target: matches quadrature of the discretized divergence") {
  // P: exact N(0, I) bin masses from the normal CDF; Q: N((2,0), I) density at
  // bin centres times bin area, renormalized.
  const HistogramGrid grid;
  const std::size_t b = grid.bins;
  const double w = grid.bin_width();
  std::vector<double> px(b), qx(b), qy(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double lo = -grid.radius + w * static_cast<double>(i);
    px[i] = normal_cdf(lo + w) - normal_cdf(lo);
    const double c = lo + 0.5 * w;
    qx[i] = std::exp(-0.5 * (c - 2.0) * (c - 2.0));
    qy[i] = std::exp(-0.5 * c * c);
  }
  double qsum = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) qsum += qx[i] * qy[j];
  }
  double oracle = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double p = px[i] * px[j];
      const double q = qx[i] * qy[j] / qsum;
      const double m = 0.5 * (p + q);
      oracle += 0.5 * plogp_ratio(p, m) + 0.5 * plogp_ratio(q, m);
    }
  }
  const auto samples = GaussianMixture::standard_normal(2).sample(1000000, 8);
  const auto r = jsd_to_target(samples, GaussianMixture::single(vec2(2.0, 0.0), 1.0));
  MESSAGE("estimate " << r.value << ", quadrature " << oracle);
  CHECK(std::abs(r.value - oracle) < 0.01);
}

TEST_CASE("jsd_to_target: preconditions and clipping metadata") {
  const auto target = GaussianMixture::single(vec2(0, 0), 1.0);
  CHECK_THROWS_AS(jsd_to_target(Batch::Zero(2, 999), target), ConfigError);
  CHECK_THROWS_AS(jsd_to_target(Batch::Zero(3, 2000), GaussianMixture::standard_normal(3)),
                  ConfigError);
  Batch samples = target.sample(2000, 1);
  samples.leftCols(100).setConstant(50.0);
  const auto r = jsd_to_target(samples, target);
  CHECK(r.outside_fraction == doctest::Approx(0.05));
  CHECK(r.clipped_warning);
  CHECK(r.value >= 0.0);
  CHECK(r.value <= std::log(2.0));
}

TEST_CASE("velocity_error_at_zero: analytic source with omega = 1 is exact") {
  const auto task = default_task();
  const AnalyticVelocity analytic(task);
  for (Strategy st : {Strategy::kCfg, Strategy::kCfgZeroStar, Strategy::kConditional}) {
    const auto e = velocity_error_at_zero(analytic, GuidanceSpec{st, 1.0, 1}, task, 1, 99);
    CHECK(e.error_norm <= 1e-10);
    CHECK(e.ground_truth_norm > 0.5);
  }
}

TEST_CASE("velocity_error_at_zero: untrained model equals the zero baseline") {
  const auto task = default_task();
  const MLPVelocityModel model(ModelShape{}, 4);
  const ModelVelocity source(model);
  const auto e = velocity_error_at_zero(source, GuidanceSpec{Strategy::kCfg, 1.0}, task, 0, 3);
  CHECK(e.error_norm == e.ground_truth_norm);
  // The gate does not hide the guided velocity being measured.
  const auto g =
      velocity_error_at_zero(source, GuidanceSpec{Strategy::kCfgZeroStar, 2.0, 1}, task, 0, 3);
  CHECK(g.error_norm == e.error_norm);
}

TEST_CASE("velocity_error_at_zero: deterministic probes") {
  const auto task = default_task();
  MLPVelocityModel model(ModelShape{}, 4);
  model.params().dense.back().bias.setConstant(0.3);
  const ModelVelocity source(model);
  const GuidanceSpec spec{Strategy::kCfg, 2.0};
  const auto a = velocity_error_at_zero(source, spec, task, 1, 11);
  const auto b = velocity_error_at_zero(source, spec, task, 1, 11);
  CHECK(a.error_norm == b.error_norm);
  CHECK(a.ground_truth_norm == b.ground_truth_norm);
}

TEST_CASE("summary_stats") {
  Batch two(2, 2);
  two << 0, 2, 0, 0;
  const auto s = summary_stats(two);
  CHECK(s.mean[0] == 1.0);
  CHECK(s.mean[1] == 0.0);
  CHECK(s.covariance(0, 0) == doctest::Approx(2.0));

  const auto g = GaussianMixture::single(vec2(1.0, -3.0), 1.0);
  const auto big = summary_stats(g.sample(1000000, 2));
  CHECK((big.covariance - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 0.01);

  const GaussianMixture two_modes({{vec2(-3, 0), 0.1}, {vec2(3, 0), 0.1}}, {0.5, 0.5});
  const auto m = summary_stats(two_modes.sample(100000, 3), &two_modes);
  REQUIRE(m.mode_fractions.size() == 2);
  CHECK(std::abs(m.mode_fractions[0] - 0.5) < 0.01);
  CHECK(m.mode_fractions[0] + m.mode_fractions[1] == doctest::Approx(1.0));
}
