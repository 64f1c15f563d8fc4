#include "loadcast/metrics.hpp"

#include <boost/math/distributions/normal.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "loadcast/error.hpp"

namespace loadcast::metrics {

void IntervalSet::validate() const {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::DomainError, "interval level must lie in (0, 1)");
  for (const auto& iv : intervals) {
    if (!(iv.upper >= iv.lower)) fail(ErrorCode::DomainError, "interval upper bound below lower bound");
  }
}

PointMetrics point_metrics(std::span<const double> actuals, std::span<const double> predictions) {
  if (actuals.size() != predictions.size()) {
    fail(ErrorCode::ShapeError, "actuals and predictions differ in length");
  }
  if (actuals.empty()) fail(ErrorCode::ShapeError, "point metrics need at least one sample");
  double se = 0.0;
  double ae = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    const double e = actuals[i] - predictions[i];
    se += e * e;
    ae += std::abs(e);
  }
  const double n = static_cast<double>(actuals.size());
  PointMetrics m;
  m.mse = se / n;
  m.rmse = std::sqrt(m.mse);
  m.mae = ae / n;
  return m;
}

double picp(std::span<const double> actuals, const IntervalSet& intervals) {
  if (actuals.size() != intervals.size()) fail(ErrorCode::ShapeError, "actuals and intervals differ in count");
  if (actuals.empty()) fail(ErrorCode::ShapeError, "PICP needs at least one sample");
  intervals.validate();
  std::size_t covered = 0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    const auto& iv = intervals.intervals[i];
    if (iv.lower <= actuals[i] && actuals[i] <= iv.upper) ++covered;
  }
  return 100.0 * static_cast<double>(covered) / static_cast<double>(actuals.size());
}

double sharpness(const IntervalSet& intervals) {
  if (intervals.intervals.empty()) fail(ErrorCode::ShapeError, "sharpness needs at least one interval");
  intervals.validate();
  double width = 0.0;
  for (const auto& iv : intervals.intervals) width += iv.upper - iv.lower;
  return width / static_cast<double>(intervals.size());
}

double pinball(std::span<const double> actuals, std::span<const QuantileForecast> forecasts) {
  if (actuals.size() != forecasts.size()) fail(ErrorCode::ShapeError, "actuals and quantiles differ in count");
  if (actuals.empty()) fail(ErrorCode::ShapeError, "pinball loss needs at least one sample");
  double total = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    const double tau = forecasts[i].tau;
    if (!(tau > 0.0 && tau < 1.0)) fail(ErrorCode::DomainError, "quantile level must lie in (0, 1)");
    const double diff = actuals[i] - forecasts[i].value;
    total += diff >= 0 ? tau * diff : (tau - 1.0) * diff;
  }
  return total / static_cast<double>(actuals.size());
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::DomainError, "probability must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double two_sided_z(double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::DomainError, "interval level must lie in (0, 1)");
  return normal_quantile(0.5 + level / 2.0);
}

std::string format_number(double v) {
  // Shortest form that parses back to the same double.
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ec == std::errc{} ? end : buf);
}

std::string MetricsReport::to_key_value() const {
  std::ostringstream out;
  out << "mse=" << format_number(mse) << "\n";
  out << "rmse=" << format_number(rmse) << "\n";
  out << "mae=" << format_number(mae) << "\n";
  if (sharpness) out << "sharpness=" << format_number(*sharpness) << "\n";
  if (picp) out << "picp=" << format_number(*picp) << "\n";
  if (pinball) out << "pinball=" << format_number(*pinball) << "\n";
  out << "sample_count=" << sample_count << "\n";
  out << "unit=" << unit << "\n";
  return out.str();
}

MetricsReport MetricsReport::from_key_value(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto number = [&](const char* key) -> std::optional<double> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return std::stod(it->second);
  };
  MetricsReport r;
  if (!kv.contains("mse") || !kv.contains("sample_count")) {
    fail(ErrorCode::ParseError, "metrics report lacks mandatory fields");
  }
  r.mse = *number("mse");
  r.rmse = number("rmse").value_or(std::sqrt(r.mse));
  r.mae = number("mae").value_or(0.0);
  r.sharpness = number("sharpness");
  r.picp = number("picp");
  r.pinball = number("pinball");
  r.sample_count = std::stoull(kv["sample_count"]);
  if (kv.contains("unit")) r.unit = kv["unit"];
  return r;
}

std::string MetricsReport::csv_header() { return "model,mse,rmse,mae,sharpness,picp,pinball,samples,unit"; }

std::string MetricsReport::to_csv_row(const std::string& label) const {
  const auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("N/A"); };
  std::ostringstream out;
  out << label << ',' << format_number(mse) << ',' << format_number(rmse) << ',' << format_number(mae) << ','
      << opt(sharpness) << ',' << opt(picp) << ',' << opt(pinball) << ',' << sample_count << ',' << unit;
  return out.str();
}

MetricsReport evaluate_point(std::span<const double> actuals, std::span<const double> predictions,
                             const std::string& unit) {
  const PointMetrics pm = point_metrics(actuals, predictions);
  MetricsReport r;
  r.mse = pm.mse;
  r.rmse = pm.rmse;
  r.mae = pm.mae;
  r.sample_count = actuals.size();
  r.unit = unit;
  return r;
}

MetricsReport evaluate_gaussian(std::span<const double> actuals, std::span<const double> mu,
                                std::span<const double> sigma, double level, const std::string& unit) {
  if (sigma.size() != mu.size()) fail(ErrorCode::ShapeError, "mu and sigma differ in length");
  MetricsReport r = evaluate_point(actuals, mu, unit);
  const double z = two_sided_z(level);
  IntervalSet set;
  set.level = level;
  set.intervals.reserve(mu.size());
  std::vector<QuantileForecast> quantiles;
  const double tau_lo = (1.0 - level) / 2.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    set.intervals.push_back({mu[i] - z * sigma[i], mu[i] + z * sigma[i]});
  }
  // Pinball averaged over the two interval quantiles.
  std::vector<double> doubled;
  doubled.reserve(2 * mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    quantiles.push_back({set.intervals[i].lower, tau_lo});
    quantiles.push_back({set.intervals[i].upper, 1.0 - tau_lo});
    doubled.push_back(actuals[i]);
    doubled.push_back(actuals[i]);
  }
  r.picp = picp(actuals, set);
  r.sharpness = sharpness(set);
  r.pinball = pinball(doubled, quantiles);
  return r;
}

}  // namespace loadcast::metrics
