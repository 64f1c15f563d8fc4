#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace loadcast::baselines {

/// Repeats the value one season earlier: forecast(t) = history(t - season).
/// Throws InsufficientData when history is shorter than a season.
std::vector<double> seasonal_naive(std::span<const double> history, std::size_t season,
                                   std::size_t horizon);

/// Autoregression with an optional single seasonal lag and optional first
/// differencing, fitted by conditional least squares. No moving-average terms.
struct ARModel {
  int order = 1;
  int seasonal_lag = 0;  // 0 = none
  int differencing = 0;  // 0 or 1
  std::vector<double> phi;
  double seasonal_coef = 0.0;
  double intercept = 0.0;
  double residual_variance = 0.0;

  /// Observations needed before the first forecast.
  std::size_t min_history() const;
};

/// Throws InsufficientData (fewer than 10 observations per regressor),
/// SingularError (rank-deficient lag matrix, e.g. a constant series).
ARModel fit_ar(std::span<const double> series, int order, int seasonal_lag = 0, int differencing = 0);

/// Iterated one-step forecasts, feeding predictions forward.
std::vector<double> forecast_ar(const ARModel& model, std::span<const double> history,
                                std::size_t horizon);

}  // namespace loadcast::baselines
