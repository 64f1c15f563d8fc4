#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace loadcast::metrics {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct IntervalSet {
  std::vector<Interval> intervals;
  double level = 0.95;

  /// U >= L everywhere and level in (0, 1). Throws DomainError.
  void validate() const;
  std::size_t size() const { return intervals.size(); }
};

struct PointMetrics {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
};

/// Throws ShapeError on length mismatch or empty input.
PointMetrics point_metrics(std::span<const double> actuals, std::span<const double> predictions);

/// Coverage in percent; bounds count as covered.
double picp(std::span<const double> actuals, const IntervalSet& intervals);

/// Mean interval width, in the unit of the bounds.
double sharpness(const IntervalSet& intervals);

struct QuantileForecast {
  double value = 0.0;
  double tau = 0.5;
};

/// Mean pinball loss. Throws DomainError for tau outside (0, 1).
double pinball(std::span<const double> actuals, std::span<const QuantileForecast> forecasts);

/// Standard normal quantile.
double normal_quantile(double p);
/// Two-sided z for a central interval: level 0.95 -> 1.959964.
double two_sided_z(double level);

struct MetricsReport {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> sharpness;
  std::optional<double> picp;  // percent
  std::optional<double> pinball;
  std::size_t sample_count = 0;
  std::string unit = "MW";

  /// Flat "key=value" lines in a fixed order; absent fields are omitted.
  std::string to_key_value() const;
  static MetricsReport from_key_value(const std::string& text);

  static std::string csv_header();
  /// One CSV row; absent probabilistic fields render as "N/A".
  std::string to_csv_row(const std::string& label) const;

  bool operator==(const MetricsReport&) const = default;
};

/// Point and interval scores of Gaussian forecasts N(mu, sigma^2) at a level.
MetricsReport evaluate_gaussian(std::span<const double> actuals, std::span<const double> mu,
                                std::span<const double> sigma, double level,
                                const std::string& unit);

/// Point-only scores (for models without predictive spread).
MetricsReport evaluate_point(std::span<const double> actuals, std::span<const double> predictions,
                             const std::string& unit);

/// Round-trippable float formatting used by every text serialization.
std::string format_number(double v);

}  // namespace loadcast::metrics
