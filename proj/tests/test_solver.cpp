// Copyright 2026 The flowguide Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <doctest.h>

#include "flowguide/errors.hpp"
#include "flowguide/metrics.hpp"
#include "flowguide/solver.hpp"

using namespace flowguide;

namespace {

Batch point(std::initializer_list<double> v) {
  Batch x(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double a : v) x(i++, 0) = a;
  return x;
}

const Field kIdentity = [](const Batch& x, double) { return x; };

GuidedField identity_field() {
  return [](const Batch& x, double, std::size_t) { return x; };
}

// Least-squares slope of log(err) against log(h).
double fitted_order(Method method) {
  std::vector<double> lx, ly;
  for (std::size_t T : {10u, 20u, 40u, 80u, 160u}) {
    const auto traj = integrate(identity_field(), point({1.0}), TimeGrid(T), method,
                                GuidanceSpec{Strategy::kCfg, 1.0});
    lx.push_back(std::log(1.0 / static_cast<double>(T)));
    ly.push_back(std::log(std::abs(traj.final_state()(0, 0) - std::exp(1.0))));
  }
  const double n = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("TimeGrid nodes") {
  const TimeGrid grid(10);
  CHECK(grid.node(0) == 0.0);
  CHECK(grid.node(10) == 1.0);
  for (std::size_t i = 0; i < 10; ++i) CHECK(grid.node(i + 1) > grid.node(i));
  CHECK_THROWS_AS(TimeGrid(0), ConfigError);
}

TEST_CASE("euler_step") {
  const Field constant = [](const Batch& x, double) {
    Batch c(x.rows(), x.cols());
    c.setConstant(2.0);
    return c;
  };
  const Field zero = [](const Batch& x, double) { return Batch::Zero(x.rows(), x.cols()); };
  CHECK(euler_step(constant, point({1, 1}), 0.0, 0.25)(0, 0) == 1.5);
  CHECK((euler_step(zero, point({3, 4}), 0.0, 0.1).array() == point({3, 4}).array()).all());
  const Batch x = euler_step(kIdentity, point({1, 0}), 0.0, 0.1);
  CHECK(x(0, 0) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(x(1, 0) == 0.0);
  CHECK_THROWS_AS(euler_step(kIdentity, point({1}), 0.0, 0.0), ConfigError);
}

TEST_CASE("midpoint_step") {
  const Field constant = [](const Batch& x, double) {
    Batch c(x.rows(), x.cols());
    c.setConstant(-3.0);
    return c;
  };
  CHECK(midpoint_step(constant, point({1}), 0.0, 0.1)(0, 0) ==
        euler_step(constant, point({1}), 0.0, 0.1)(0, 0));
  CHECK(midpoint_step(kIdentity, point({1}), 0.0, 0.1)(0, 0) == doctest::Approx(1.105).epsilon(1e-15));
  // Midpoint uses the field at t + h/2.
  const Field time_only = [](const Batch& x, double t) {
    Batch c(x.rows(), x.cols());
    c.setConstant(t);
    return c;
  };
  CHECK(midpoint_step(time_only, point({0}), 0.2, 0.1)(0, 0) == doctest::Approx(0.1 * 0.25));
}

TEST_CASE("steps report divergence with the step index") {
  const Field bad = [](const Batch& x, double) {
    Batch c = x;
    c(0, 0) = std::nan("");
    return c;
  };
  try {
    midpoint_step(bad, point({1}), 0.0, 0.1, 6);
    FAIL("expected DivergedError");
  } catch (const DivergedError& e) {
    CHECK(e.step() == 6);
  }
}

TEST_CASE("convergence orders on dx/dt = x") {
  const double euler = fitted_order(Method::kEuler);
  const double midpoint = fitted_order(Method::kMidpoint);
  MESSAGE("euler slope " << euler << ", midpoint slope " << midpoint);
  CHECK(std::abs(euler - 1.0) <= 0.15);
  CHECK(std::abs(midpoint - 2.0) <= 0.15);
}

TEST_CASE("integrate: gate holds the first K states") {
  for (Method m : {Method::kEuler, Method::kMidpoint}) {
    const GuidanceSpec spec{Strategy::kCfgZeroStar, 2.0, 3};
    const auto traj = integrate(identity_field(), point({1, -2}), TimeGrid(10), m, spec);
    REQUIRE(traj.states.size() == 11);
    REQUIRE(traj.times.size() == 11);
    for (std::size_t i = 0; i <= 3; ++i) {
      CHECK((traj.states[i].array() == traj.states[0].array()).all());
    }
    CHECK((traj.states[4].array() != traj.states[3].array()).any());
    for (std::size_t i = 0; i <= 10; ++i) CHECK(traj.times[i] == TimeGrid(10).node(i));
  }
}

TEST_CASE("integrate: K = 1 Euler takes its first real step at t_1") {
  const GuidanceSpec spec{Strategy::kCfgZeroInit, 2.0, 1};
  const GuidedField field = [](const Batch& x, double t, std::size_t) { return Batch(x.array() * t); };
  const auto traj = integrate(field, point({2}), TimeGrid(4), Method::kEuler, spec);
  CHECK(traj.states[1](0, 0) == 2.0);
  CHECK(traj.states[2](0, 0) == doctest::Approx(2.0 + 0.25 * 2.0 * 0.25));
}

TEST_CASE("integrate: full gate leaves samples in place") {
  const GuidanceSpec spec{Strategy::kCfgZeroInit, 2.0, 5};
  const Batch x0 = Batch::Random(2, 20);
  const auto traj = integrate(identity_field(), x0, TimeGrid(5), Method::kMidpoint, spec);
  CHECK((traj.final_state().array() == x0.array()).all());
}

TEST_CASE("integrate: analytic velocity transports N(0, I) to N(mu, I)") {
  Vec mu(2);
  mu << 2.0, -1.0;
  const ClassConditionalTask task(GaussianMixture::standard_normal(2),
                                  {GaussianMixture::single(mu, 1.0)}, {1.0});
  const AnalyticVelocity source(task);
  const GuidanceSpec spec{Strategy::kConditional, 1.0};
  const Batch x0 = task.source().sample(10000, 17);
  const auto traj =
      integrate(make_guided_field(source, spec, 0), x0, TimeGrid(100), Method::kMidpoint, spec);
  const auto stats = summary_stats(traj.final_state(), nullptr);
  CHECK((stats.mean - mu).cwiseAbs().maxCoeff() < 0.05);
  CHECK((stats.covariance - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("trajectory CSV layout") {
  const GuidanceSpec spec{Strategy::kCfg, 1.0};
  auto traj = integrate(identity_field(), Batch::Ones(2, 2), TimeGrid(2), Method::kEuler, spec);
  std::ostringstream out;
  write_trajectory_csv(out, traj);
  const std::string text = out.str();
  CHECK(text.rfind("sample_id,step,t,x0,x1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 3);
  CHECK(text.find("1,2,1,2.25,2.25\n") != std::string::npos);
}
