#include "loadcast/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <string>

#include "loadcast/error.hpp"

namespace loadcast::baselines {

std::vector<double> seasonal_naive(std::span<const double> history, std::size_t season,
                                   std::size_t horizon) {
  if (season == 0) fail(ErrorCode::DomainError, "season must be positive");
  if (history.size() < season) {
    fail(ErrorCode::InsufficientData, "seasonal naive needs " + std::to_string(season) +
                                          " points, got " + std::to_string(history.size()));
  }
  std::vector<double> extended(history.begin(), history.end());
  const std::size_t n = history.size();
  for (std::size_t h = 0; h < horizon; ++h) extended.push_back(extended[n + h - season]);
  return {extended.begin() + static_cast<std::ptrdiff_t>(n), extended.end()};
}

std::size_t ARModel::min_history() const {
  return static_cast<std::size_t>(std::max(order, seasonal_lag) + differencing);
}

namespace {

std::vector<double> difference(std::span<const double> y, int d) {
  if (d == 0) return {y.begin(), y.end()};
  std::vector<double> w;
  w.reserve(y.size());
  for (std::size_t i = 1; i < y.size(); ++i) w.push_back(y[i] - y[i - 1]);
  return w;
}

double one_step(const ARModel& m, const std::vector<double>& w) {
  const std::size_t t = w.size();
  double pred = m.intercept;
  for (int k = 1; k <= m.order; ++k) pred += m.phi[k - 1] * w[t - k];
  if (m.seasonal_lag > 0) pred += m.seasonal_coef * w[t - m.seasonal_lag];
  return pred;
}

}  // namespace

ARModel fit_ar(std::span<const double> series, int order, int seasonal_lag, int differencing) {
  if (order < 1) fail(ErrorCode::DomainError, "AR order must be at least 1");
  if (seasonal_lag < 0) fail(ErrorCode::DomainError, "seasonal lag must be non-negative");
  if (differencing != 0 && differencing != 1) fail(ErrorCode::DomainError, "differencing order must be 0 or 1");
  if (seasonal_lag > 0 && seasonal_lag <= order) {
    fail(ErrorCode::DomainError, "seasonal lag must exceed the AR order");
  }

  const std::vector<double> w = difference(series, differencing);
  const int regressors = order + (seasonal_lag > 0 ? 1 : 0);
  const auto n = static_cast<std::ptrdiff_t>(w.size());
  if (n < 10 * regressors) {
    fail(ErrorCode::InsufficientData, "AR fit needs at least " + std::to_string(10 * regressors) +
                                          " observations, got " + std::to_string(n));
  }
  const std::ptrdiff_t first = std::max(order, seasonal_lag);
  const std::ptrdiff_t rows = n - first;
  const int k = regressors + 1;
  if (rows <= k) fail(ErrorCode::InsufficientData, "too few rows after lagging");

  Eigen::MatrixXd x(rows, k);
  Eigen::VectorXd y(rows);
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::ptrdiff_t t = first + r;
    x(r, 0) = 1.0;
    for (int lag = 1; lag <= order; ++lag) x(r, lag) = w[t - lag];
    if (seasonal_lag > 0) x(r, order + 1) = w[t - seasonal_lag];
    y(r) = w[t];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) fail(ErrorCode::SingularError, "lagged regressor matrix is rank deficient");
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - x * beta;

  ARModel m;
  m.order = order;
  m.seasonal_lag = seasonal_lag;
  m.differencing = differencing;
  m.intercept = beta(0);
  m.phi.assign(beta.data() + 1, beta.data() + 1 + order);
  if (seasonal_lag > 0) m.seasonal_coef = beta(order + 1);
  m.residual_variance = resid.squaredNorm() / static_cast<double>(rows - k);
  return m;
}

std::vector<double> forecast_ar(const ARModel& model, std::span<const double> history,
                                std::size_t horizon) {
  if (history.size() < std::max<std::size_t>(model.min_history(), 1)) {
    fail(ErrorCode::InsufficientData, "AR forecast needs " + std::to_string(model.min_history()) +
                                          " history points");
  }
  if (static_cast<int>(model.phi.size()) != model.order) fail(ErrorCode::ConfigError, "AR model is malformed");
  std::vector<double> w = difference(history, model.differencing);
  double level = history.back();
  std::vector<double> out;
  out.reserve(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    const double next = one_step(model, w);
    w.push_back(next);
    if (model.differencing == 1) {
      level += next;
      out.push_back(level);
    } else {
      out.push_back(next);
    }
  }
  return out;
}

}  // namespace loadcast::baselines
