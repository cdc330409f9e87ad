// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <doctest.h>

#include "flowguide/errors.hpp"
#include "flowguide/gmm.hpp"

using namespace flowguide;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Closed form for source N(0, I), target N(mu, I):
// [(2t - 1) / ((1 - t)^2 + t^2)] (x - t mu) + mu.
Vec unit_variance_closed_form(const Vec& mu, const Vec& x, double t) {
  return (2.0 * t - 1.0) / ((1.0 - t) * (1.0 - t) + t * t) * (x - t * mu) + mu;
}

double gaussian_pdf(const Vec& x, const Vec& mean, double var) {
  const double d = static_cast<double>(x.size());
  return std::exp(-0.5 * (x - mean).squaredNorm() / var) / std::pow(2.0 * std::numbers::pi * var, d / 2.0);
}

GaussianMixture two_modes(double sep, double var, double w0 = 0.5) {
  return GaussianMixture({{v2(sep, 0), var}, {v2(-sep, 0), var}}, {w0, 1.0 - w0});
}

}  // namespace

TEST_CASE("mixture validation rejects bad inputs") {
  CHECK_THROWS_AS(GaussianMixture({}, {}), ConfigError);
  CHECK_THROWS_AS(GaussianMixture({{v2(0, 0), 1.0}}, {0.9}), ConfigError);
  CHECK_THROWS_AS(GaussianMixture({{v2(0, 0), 1.0}, {v2(0, 0), 1.0}}, {1.2, -0.2}), ConfigError);
  CHECK_THROWS_AS(GaussianMixture({{v2(0, 0), 0.0}}, {1.0}), ConfigError);
  Vec three(3);
  three.setZero();
  CHECK_THROWS_AS(GaussianMixture({{v2(0, 0), 1.0}, {three, 1.0}}, {0.5, 0.5}), ConfigError);
  CHECK_NOTHROW(GaussianMixture({{v2(0, 0), 1.0}, {v2(1, 0), 1.0}}, {0.5, 0.5}));
}

TEST_CASE("sample: law of large numbers for a single component") {
  const auto g = GaussianMixture::single(v2(3, -1));
  const std::size_t n = 1'000'000;
  const Batch s = g.sample(n, 11);
  const double tol = 5.0 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(s.row(0).mean() - 3.0) < tol);
  CHECK(std::abs(s.row(1).mean() + 1.0) < tol);
}

TEST_CASE("sample: zero-weight components are never drawn") {
  const GaussianMixture g({{v2(0, 0), 1.0}, {v2(100, 0), 1.0}}, {1.0, 0.0});
  Rng rng(5);
  std::vector<std::size_t> assignment;
  const Batch s = g.sample(20000, rng, assignment);
  for (auto k : assignment) CHECK(k == 0);
  CHECK(s.row(0).maxCoeff() < 10.0);
}

TEST_CASE("sample: mode fraction within binomial interval") {
  // sd of the fraction is sqrt(0.25 / 1e5) ~ 0.00158; [0.495, 0.505] is ~3.2 sd.
  const auto g = two_modes(5.0, 0.25);
  const Batch s = g.sample(100'000, 2024);
  const double right = (s.row(0).array() > 0.0).cast<double>().mean();
  CHECK(right >= 0.495);
  CHECK(right <= 0.505);
}

TEST_CASE("sample: identical seeds give bit-identical draws") {
  const auto task = default_task();
  const Batch a = task.marginal().sample(1000, 77);
  const Batch b = task.marginal().sample(1000, 77);
  CHECK((a.array() == b.array()).all());
  const Batch c = task.marginal().sample(1000, 78);
  CHECK_FALSE((a.array() == c.array()).all());
}

TEST_CASE("log_density: normalizing constant, permutation, degenerate mixture") {
  const auto std2 = GaussianMixture::standard_normal(2);
  CHECK(std2.log_density(v2(0, 0)) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(std2.log_density(v2(0, 0)) == doctest::Approx(-1.837877).epsilon(1e-6));

  const GaussianMixture a({{v2(1, 2), 0.5}, {v2(-1, 0), 2.0}, {v2(0, 3), 1.0}}, {0.2, 0.3, 0.5});
  const GaussianMixture b({{v2(0, 3), 1.0}, {v2(1, 2), 0.5}, {v2(-1, 0), 2.0}}, {0.5, 0.2, 0.3});
  const GaussianMixture doubled({{v2(0, 0), 1.0}, {v2(0, 0), 1.0}}, {0.5, 0.5});
  Rng rng(3);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const Vec x = v2(normal(rng), normal(rng));
    CHECK(a.log_density(x) == doctest::Approx(b.log_density(x)).epsilon(1e-13));
    CHECK(doubled.log_density(x) == doctest::Approx(std2.log_density(x)).epsilon(1e-13));
  }
}

TEST_CASE("log_density: stable far in the tail") {
  const auto g = two_modes(1.0, 0.01);
  const double ld = g.log_density(v2(200, 0));
  CHECK(std::isfinite(ld));
  // Dominated by the right mode: log 0.5 - log(2 pi 0.01) - 199^2 / 0.02.
  CHECK(ld == doctest::Approx(std::log(0.5) - std::log(2 * std::numbers::pi * 0.01) - 199.0 * 199.0 / 0.02));
}

TEST_CASE("path_responsibilities: trivial and symmetric cases") {
  const auto single = GaussianMixture::single(v2(2, 1), 0.3);
  for (double t : {0.0, 0.4, 1.0}) {
    const auto g = path_responsibilities(single, v2(5, -3), t);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == 1.0);
  }
  const auto sym = two_modes(3.0, 0.2);
  for (double t : {0.1, 0.5, 0.9}) {
    const auto g = path_responsibilities(sym, v2(0, 1.7), t);
    CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-14));
  }
}

TEST_CASE("path_responsibilities: Bayes rule by quadrature over x1") {
  // p(x_t = x | k) = int N(x; t x1, (1-t)^2 I) N(x1; mu_k, s_k^2 I) dx1, on a
  // dense grid around each component mean.
  const GaussianMixture target({{v2(2, 0), 0.3}, {v2(-1, 1), 0.6}}, {0.35, 0.65});
  auto quadrature = [&](const Vec& x, double t) {
    std::vector<double> lik(target.size());
    for (std::size_t k = 0; k < target.size(); ++k) {
      const auto& c = target.component(k);
      const double sd = std::sqrt(c.variance);
      const int n = 600;
      const double lo = -8 * sd, step = 16 * sd / n;
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const Vec x1 = c.mean + v2(lo + (i + 0.5) * step, lo + (j + 0.5) * step);
          const double u = 1.0 - t;
          sum += gaussian_pdf(x, t * x1, u * u) * gaussian_pdf(x1, c.mean, c.variance);
        }
      }
      lik[k] = target.weights()[k] * sum * step * step;
    }
    const double total = lik[0] + lik[1];
    return std::vector<double>{lik[0] / total, lik[1] / total};
  };
  // t = 0: every component explains x equally well, so gamma is the prior.
  const auto g0 = path_responsibilities(target, v2(0.7, -0.2), 0.0);
  CHECK(g0[0] == doctest::Approx(0.35).epsilon(1e-12));
  const auto q0 = quadrature(v2(0.7, -0.2), 0.0);
  CHECK(q0[0] == doctest::Approx(0.35).epsilon(1e-6));
  for (double t : {0.3, 0.6}) {
    const Vec x = v2(0.4, 0.3);
    const auto g = path_responsibilities(target, x, t);
    const auto q = quadrature(x, t);
    CHECK(g[0] == doctest::Approx(q[0]).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(q[1]).epsilon(1e-6));
  }
}

TEST_CASE("path_responsibilities: nonnegative and normalized") {
  const auto task = default_task();
  Rng rng(8);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 4.0);
  for (int i = 0; i < 500; ++i) {
    const auto g = path_responsibilities(task.marginal(), v2(normal(rng), normal(rng)), ut(rng));
    double sum = 0.0;
    for (double v : g) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("path_responsibilities: non-finite likelihoods fall back to the prior") {
  const auto g = two_modes(1.0, 0.5, 0.3);
  const double inf = std::numeric_limits<double>::infinity();
  const auto gamma = path_responsibilities(g, v2(inf, 0.0), 0.5);
  CHECK(gamma[0] == doctest::Approx(0.3));
  CHECK(gamma[1] == doctest::Approx(0.7));
}

TEST_CASE("optimal_velocity: closed-form single Gaussian cases") {
  const Vec mu = v2(2, 0);
  const auto q = GaussianMixture::single(mu);
  // t = 0.5 nullifies the x term.
  const Vec v_half = optimal_velocity(q, v2(-7, 3), 0.5);
  CHECK(v_half[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(v_half[1] == doctest::Approx(0.0));
  // -0.5 / 0.625 = -0.8; -0.8 * 0.5 + 2 = 1.6.
  const Vec v = optimal_velocity(q, v2(1, 0), 0.25);
  CHECK(v[0] == doctest::Approx(1.6).epsilon(1e-14));
  CHECK(std::abs(v[1]) < 1e-15);
  const Vec v0 = optimal_velocity(q, v2(0, 0), 0.0);
  CHECK(v0[0] == doctest::Approx(2.0));
}

TEST_CASE("optimal_velocity: unit-variance closed form at 1000 random points") {
  Rng rng(1234);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec mu = v2(normal(rng), normal(rng));
    const Vec x = v2(normal(rng), normal(rng));
    const double t = ut(rng);
    const Vec got = optimal_velocity(GaussianMixture::single(mu), x, t);
    worst = std::max(worst, (got - unit_variance_closed_form(mu, x, t)).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("optimal_velocity: equals component-wise recomputation") {
  // Independent route: direct (non-log) densities and per-component formula.
  const GaussianMixture target({{v2(1, 1), 0.2}, {v2(-2, 0.5), 0.5}, {v2(0, -1.5), 1.3}},
                               {0.2, 0.5, 0.3});
  Rng rng(99);
  std::normal_distribution<double> normal(0.0, 1.5);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Vec x = v2(normal(rng), normal(rng));
    const double t = ut(rng);
    std::vector<double> lik(3);
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& c = target.component(k);
      const double a = (1 - t) * (1 - t) + t * t * c.variance;
      lik[k] = target.weights()[k] * gaussian_pdf(x, t * c.mean, a);
      total += lik[k];
    }
    Vec expected = Vec::Zero(2);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& c = target.component(k);
      const double a = (1 - t) * (1 - t) + t * t * c.variance;
      expected += (lik[k] / total) * (c.mean + (t * c.variance - (1 - t)) / a * (x - t * c.mean));
    }
    CHECK((optimal_velocity(target, x, t) - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("optimal_velocity: mixture source generalizes the standard source") {
  const GaussianMixture target({{v2(1, 1), 0.2}, {v2(-2, 0.5), 0.5}}, {0.4, 0.6});
  const GaussianMixture source_as_mix({{v2(0, 0), 1.0}, {v2(0, 0), 1.0}}, {0.5, 0.5});
  const Vec x = v2(0.3, -0.4);
  for (double t : {0.0, 0.2, 0.7, 1.0}) {
    CHECK((optimal_velocity(source_as_mix, target, x, t) - optimal_velocity(target, x, t))
              .cwiseAbs()
              .maxCoeff() <= 1e-13);
  }
}

TEST_CASE("mc_velocity_oracle: agrees with closed form") {
  McOptions opt;
  opt.n_samples = 1'000'000;
  opt.seed = 17;
  SUBCASE("t = 0.5 gives mu") {
    const auto q = GaussianMixture::single(v2(2, -1));
    const auto est = mc_velocity_oracle(q, v2(0.8, -0.3), 0.5, opt);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(est.value[k] - q.component(0).mean[k]) <= 3.0 * est.standard_error[k]);
    }
  }
  SUBCASE("(2, 0) at t = 0.25, x = (1, 0) gives (1.6, 0)") {
    const auto q = GaussianMixture::single(v2(2, 0));
    const auto est = mc_velocity_oracle(q, v2(1, 0), 0.25, opt);
    CHECK(std::abs(est.value[0] - 1.6) <= 3.0 * est.standard_error[0]);
    CHECK(std::abs(est.value[1] - 0.0) <= 3.0 * est.standard_error[1]);
    CHECK(est.standard_error[0] < 0.05);
    opt.local_linear = false;
    const auto mean = mc_velocity_oracle(q, v2(1, 0), 0.25, opt);
    CHECK(std::abs(mean.value[0] - 1.6) <= 3.0 * mean.standard_error[0]);
    CHECK(mean.effective_samples == est.effective_samples);
  }
  SUBCASE("endpoints use exact conditioning") {
    const auto task = default_task();
    const Vec x = v2(0.5, 0.2);
    for (double t : {0.0, 1.0}) {
      const auto est = mc_velocity_oracle(task.target(0), x, t, opt);
      const Vec truth = optimal_velocity(task.target(0), x, t);
      for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(est.value[k] - truth[k]) <= 3.0 * est.standard_error[k] + 1e-12);
      }
    }
  }
}

TEST_CASE("mc_velocity_oracle: insufficient support in the tail") {
  McOptions opt;
  opt.n_samples = 10'000;
  const auto q = GaussianMixture::single(v2(2, 0));
  CHECK_THROWS_AS(mc_velocity_oracle(q, v2(40, 40), 0.5, opt), InsufficientSupportError);
}

TEST_CASE("conditional_and_marginal_velocities") {
  SUBCASE("single class: conditional equals marginal") {
    const ClassConditionalTask task(GaussianMixture::standard_normal(2), {two_modes(2.0, 0.3)},
                                    {1.0});
    for (double t : {0.0, 0.3, 0.9}) {
      const auto v = conditional_and_marginal_velocities(task, v2(0.4, -1.1), t, 0);
      CHECK((v.cond - v.uncond).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("symmetric classes on the axis at t = 0.5") {
    const ClassConditionalTask task(GaussianMixture::standard_normal(2),
                                    {GaussianMixture::single(v2(3, 0)),
                                     GaussianMixture::single(v2(-3, 0))},
                                    {0.5, 0.5});
    const auto v = conditional_and_marginal_velocities(task, v2(0, 0.8), 0.5, 0);
    CHECK(std::abs(v.uncond[0]) <= 1e-14);
    CHECK(std::abs(v.uncond[1]) <= 1e-14);
    CHECK(v.cond[0] == doctest::Approx(3.0));
  }
  SUBCASE("generic task: marginal matches the Monte-Carlo oracle") {
    const ClassConditionalTask task(GaussianMixture::standard_normal(2),
                                    {GaussianMixture({{v2(2, 1), 0.3}, {v2(1, -2), 0.5}}, {0.7, 0.3}),
                                     GaussianMixture::single(v2(-2, 2), 0.4)},
                                    {0.4, 0.6});
    const Vec x = v2(1, 1);
    const auto v = conditional_and_marginal_velocities(task, x, 0.3, 0);
    McOptions opt;
    opt.seed = 4;
    const auto est = mc_velocity_oracle(task.marginal(), x, 0.3, opt);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(est.value[k] - v.uncond[k]) <= 3.0 * est.standard_error[k]);
    }
    // The marginal is not the prior average of the class velocities.
    const Vec prior_avg = 0.4 * v.cond + 0.6 * optimal_velocity(task.target(1), x, 0.3);
    CHECK((prior_avg - v.uncond).norm() > 0.1);
  }
  SUBCASE("unknown label") {
    const auto task = default_task();
    CHECK_THROWS_AS(conditional_and_marginal_velocities(task, v2(0, 0), 0.5, 2), ConfigError);
  }
}

TEST_CASE("task JSON round trip and validation") {
  const auto task = default_task();
  const auto again = parse_task(task_to_json(task));
  REQUIRE(again.num_classes() == task.num_classes());
  for (Label y = 0; y < task.num_classes(); ++y) {
    for (std::size_t k = 0; k < task.target(y).size(); ++k) {
      CHECK((again.target(y).component(k).mean.array() == task.target(y).component(k).mean.array()).all());
      CHECK(again.target(y).component(k).variance == task.target(y).component(k).variance);
    }
  }
  CHECK_THROWS_AS(parse_task("{\"dim\": 2}"), ConfigError);
  CHECK_THROWS_AS(parse_task("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_task(R"({"dim":2,"classes":[{"weights":[1],"means":[[0,0,0]],"variances":[1]}],"class_prior":[1]})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_task(R"({"dim":2,"classes":[{"weights":[1],"means":[[0,0]],"variances":[1]}],"class_prior":[0.5]})"),
                  ConfigError);
}
