#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "loadcast/baselines.hpp"

using namespace loadcast;
using namespace loadcast::baselines;
using testing::code_of;

TEST_CASE("seasonal naive") {
  std::vector<double> periodic(168 * 3);
  for (std::size_t i = 0; i < periodic.size(); ++i) periodic[i] = std::sin(0.3 * static_cast<double>(i % 168)) * 100;
  const std::vector<double> history(periodic.begin(), periodic.begin() + 168 * 2);
  const auto f = seasonal_naive(history, 168, 24);
  for (std::size_t i = 0; i < 24; ++i) CHECK(f[i] == periodic[168 * 2 + i]);

  std::vector<double> idx(200);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i);
  const auto g = seasonal_naive(idx, 168, 24);
  for (std::size_t h = 0; h < 24; ++h) CHECK(g[h] == static_cast<double>(200 + h - 168));

  CHECK(code_of([] { seasonal_naive(std::vector<double>(100, 1.0), 168, 24); }) == ErrorCode::InsufficientData);
}

TEST_CASE("AR(1) coefficient recovery by Monte Carlo") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> eps(0, 1);
  std::vector<double> y(2000);
  for (std::size_t t = 1; t < y.size(); ++t) y[t] = 0.8 * y[t - 1] + eps(rng);
  const ARModel m = fit_ar(y, 1);
  CHECK(std::abs(m.phi[0] - 0.8) < 0.05);
  CHECK(m.residual_variance == doctest::Approx(1.0).epsilon(0.1));

  std::vector<double> noise(2000);
  for (double& v : noise) v = eps(rng);
  CHECK(std::abs(fit_ar(noise, 1).phi[0]) < 0.05);
}

TEST_CASE("noise-free AR(2) is recovered exactly") {
  // sin(wt) obeys y_t = 2cos(w) y_{t-1} - y_{t-2}.
  const double w = 2 * std::numbers::pi / 24.0;
  std::vector<double> y(500);
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = 100 * std::sin(w * static_cast<double>(t)) + 50;
  const ARModel m = fit_ar(y, 2);
  CHECK(std::abs(m.phi[0] - 2 * std::cos(w)) < 1e-8);
  CHECK(std::abs(m.phi[1] + 1.0) < 1e-8);
  CHECK(std::abs(m.intercept - 50 * (2 - 2 * std::cos(w))) < 1e-6);
}

TEST_CASE("degenerate fits") {
  CHECK(code_of([] { fit_ar(std::vector<double>(500, 3.0), 2); }) == ErrorCode::SingularError);
  CHECK(code_of([] { fit_ar(std::vector<double>(5, 1.0), 2); }) == ErrorCode::InsufficientData);
}

TEST_CASE("forecast_ar iterates the recurrence") {
  ARModel m;
  m.phi = {0.5};
  const auto f = forecast_ar(m, std::vector{1.0, 8.0}, 3);
  CHECK(f == std::vector{4.0, 2.0, 1.0});

  ARModel c;
  c.phi = {0.0};
  c.intercept = 5.0;
  CHECK(forecast_ar(c, std::vector{9.0}, 4) == std::vector{5.0, 5.0, 5.0, 5.0});

  ARModel s;
  s.phi = {0.0};
  s.seasonal_lag = 24;
  s.seasonal_coef = 1.0;
  std::vector<double> day(48);
  for (std::size_t i = 0; i < day.size(); ++i) day[i] = static_cast<double>(i * i);
  const auto r = forecast_ar(s, day, 24);
  for (std::size_t h = 0; h < 24; ++h) CHECK(r[h] == day[24 + h]);
  CHECK(code_of([&] { forecast_ar(s, std::vector<double>(10, 0.0), 24); }) == ErrorCode::InsufficientData);
}

TEST_CASE("differenced seasonal fit forecasts a trending weekly pattern") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> eps(0, 0.05);
  std::vector<double> y(168 * 6);
  for (std::size_t t = 0; t < y.size(); ++t) {
    y[t] = 0.01 * static_cast<double>(t) + 20 * std::sin(2 * std::numbers::pi * static_cast<double>(t % 168) / 168) +
           eps(rng);
  }
  const ARModel m = fit_ar(std::span(y).first(168 * 5), 3, 168, 1);
  CHECK(m.differencing == 1);
  CHECK(m.seasonal_lag == 168);
  const auto f = forecast_ar(m, std::span(y).first(168 * 5), 24);
  double mae = 0;
  for (std::size_t h = 0; h < 24; ++h) mae += std::abs(f[h] - y[168 * 5 + h]) / 24;
  CHECK(mae < 0.5);
}
