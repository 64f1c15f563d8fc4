#include <algorithm>
#include <cmath>
#include <numbers>

#include "loadcast/error.hpp"
#include "loadcast/forecaster.hpp"

namespace loadcast {

void Hyperparams::validate() const {
  if (history_horizon <= 0 || forecast_horizon <= 0) fail(ErrorCode::ConfigError, "horizons must be positive");
  if (lstm_hidden <= 0) fail(ErrorCode::ConfigError, "lstm_hidden must be positive");
  if (lstm_layers != 1) fail(ErrorCode::ConfigError, "only a single LSTM layer is supported");
  if (!(fc_dropout >= 0.0 && fc_dropout < 1.0) || !(lstm_dropout >= 0.0 && lstm_dropout < 1.0)) {
    fail(ErrorCode::ConfigError, "dropout probabilities must lie in [0, 1)");
  }
  if (!(learning_rate > 0.0)) fail(ErrorCode::ConfigError, "learning_rate must be positive");
  if (max_epochs <= 0 || batch_size <= 0) fail(ErrorCode::ConfigError, "max_epochs and batch_size must be positive");
  if (early_stop_patience <= 0) fail(ErrorCode::ConfigError, "early_stop_patience must be positive");
  if (!(variance_floor > 0.0)) fail(ErrorCode::ConfigError, "variance_floor must be positive");
  if (stride_hours <= 0) fail(ErrorCode::ConfigError, "stride_hours must be positive");
  if (grad_clip_norm < 0.0) fail(ErrorCode::ConfigError, "grad_clip_norm must be non-negative");
  if (utc_offset_hours < -14 || utc_offset_hours > 14) fail(ErrorCode::ConfigError, "utc_offset_hours out of range");
}

std::size_t ScalerParams::index_of(const std::string& name) const {
  const auto it = std::ranges::find(names, name);
  if (it == names.end()) fail(ErrorCode::NotFound, "scaler has no feature '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

double ScalerParams::range(std::size_t feature) const {
  return degenerate[feature] ? 1.0 : max[feature] - min[feature];
}

double ScalerParams::transform(std::size_t feature, double x) const {
  return (x - min[feature]) / range(feature);
}

double ScalerParams::inverse(std::size_t feature, double scaled) const {
  return scaled * range(feature) + min[feature];
}

ScalerParams fit_scaler(std::span<const std::string> names, const std::vector<std::vector<double>>& columns) {
  if (names.empty() || names.size() != columns.size()) fail(ErrorCode::EmptyData, "scaler needs named feature columns");
  ScalerParams s;
  for (std::size_t f = 0; f < names.size(); ++f) {
    if (columns[f].empty()) fail(ErrorCode::EmptyData, "feature '" + names[f] + "' has no values");
    const auto [lo, hi] = std::ranges::minmax_element(columns[f]);
    s.names.push_back(names[f]);
    s.min.push_back(*lo);
    s.max.push_back(*hi);
    s.degenerate.push_back(*hi == *lo);
  }
  return s;
}

std::vector<double> calendar_features(Timestamp t, std::int64_t utc_offset_seconds) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const CalendarFields c = calendar_fields(t, utc_offset_seconds);
  const double hour = two_pi * c.hour / 24.0;
  const double dow = two_pi * c.day_of_week / 7.0;
  const double month = two_pi * (c.month - 1) / 12.0;
  return {std::sin(hour), std::cos(hour), std::sin(dow), std::cos(dow), std::sin(month), std::cos(month)};
}

SplitPlan SplitPlan::chronological(int total_days, int pool_days, int test_days) {
  if (pool_days < 0 || test_days < 0 || pool_days + test_days >= total_days) {
    fail(ErrorCode::ConfigError, "split leaves no training days");
  }
  SplitPlan plan;
  plan.test = {total_days - test_days, total_days};
  plan.pool = {plan.test.first - pool_days, plan.test.first};
  plan.train = {0, plan.pool.first};
  return plan;
}

FeatureLayout feature_layout(const DatasetBundle& bundle, const Hyperparams& hp) {
  FeatureLayout layout;
  layout.scaled.push_back("load");
  for (const char* name : kCovariateNames) {
    if (bundle.covariates.contains(name)) {
      layout.scaled.push_back(name);
      if (hp.decoder_weather) layout.decoder_weather.push_back(name);
    }
  }
  return layout;
}

namespace {

const TimeSeries& feature_series(const DatasetBundle& bundle, const std::string& name) {
  if (name == "load") return bundle.load;
  const auto it = bundle.covariates.find(name);
  if (it == bundle.covariates.end()) fail(ErrorCode::NotFound, "bundle lacks feature '" + name + "'");
  return it->second;
}

void require_day_aligned(const DatasetBundle& bundle) {
  if (bundle.load.step.seconds != kSecondsPerHour) fail(ErrorCode::AlignmentError, "windows need hourly data");
  if (bundle.load.start.seconds % kSecondsPerDay != 0) {
    fail(ErrorCode::AlignmentError, "bundle must start at midnight UTC");
  }
}

}  // namespace

ScalerParams fit_scaler(const DatasetBundle& bundle, const FeatureLayout& layout, const DaySpan& train) {
  const std::size_t lo = static_cast<std::size_t>(std::max(train.first, 0)) * 24;
  const std::size_t hi = std::min(static_cast<std::size_t>(std::max(train.last_exclusive, 0)) * 24, bundle.hours());
  std::vector<std::vector<double>> columns;
  for (const auto& name : layout.scaled) {
    const TimeSeries& s = feature_series(bundle, name);
    columns.emplace_back(s.values.begin() + static_cast<std::ptrdiff_t>(std::min(lo, hi)),
                         s.values.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return fit_scaler(layout.scaled, columns);
}

WindowSample make_window(const DatasetBundle& bundle, const Hyperparams& hp, const FeatureLayout& layout,
                         const ScalerParams& scaler, std::size_t start_hour) {
  const auto history = static_cast<std::size_t>(hp.history_horizon);
  const auto horizon = static_cast<std::size_t>(hp.forecast_horizon);
  if (start_hour < history) fail(ErrorCode::InsufficientData, "not enough history before the target");
  const bool labelled = start_hour + horizon <= bundle.hours();

  std::vector<const TimeSeries*> scaled;
  std::vector<std::size_t> scaled_index;
  for (const auto& name : layout.scaled) {
    scaled.push_back(&feature_series(bundle, name));
    scaled_index.push_back(scaler.index_of(name));
  }
  std::vector<const TimeSeries*> weather;
  std::vector<std::size_t> weather_index;
  for (const auto& name : layout.decoder_weather) {
    weather.push_back(&feature_series(bundle, name));
    weather_index.push_back(scaler.index_of(name));
    if (weather.back()->size() < start_hour + horizon) {
      fail(ErrorCode::InsufficientData, "decoder weather for the target day is unavailable");
    }
  }
  const std::int64_t offset = static_cast<std::int64_t>(hp.utc_offset_hours) * kSecondsPerHour;

  WindowSample w;
  w.target_start = bundle.load.time_at(start_hour);
  w.encoder.reset(history, layout.encoder_features());
  for (std::size_t r = 0; r < history; ++r) {
    const std::size_t hour = start_hour - history + r;
    std::size_t c = 0;
    for (std::size_t f = 0; f < scaled.size(); ++f) {
      w.encoder(r, c++) = scaler.transform(scaled_index[f], scaled[f]->values[hour]);
    }
    for (double v : calendar_features(bundle.load.time_at(hour), offset)) w.encoder(r, c++) = v;
  }
  w.decoder.reset(horizon, layout.decoder_features());
  for (std::size_t r = 0; r < horizon; ++r) {
    const std::size_t hour = start_hour + r;
    std::size_t c = 0;
    for (double v : calendar_features(bundle.load.time_at(hour), offset)) w.decoder(r, c++) = v;
    for (std::size_t f = 0; f < weather.size(); ++f) {
      w.decoder(r, c++) = scaler.transform(weather_index[f], weather[f]->values[hour]);
    }
  }
  if (labelled) {
    const std::size_t load_index = scaler.index_of("load");
    for (std::size_t r = 0; r < horizon; ++r) {
      w.target.push_back(scaler.transform(load_index, bundle.load.values[start_hour + r]));
    }
  }
  return w;
}

WindowSample make_day_window(const DatasetBundle& bundle, const Hyperparams& hp, const FeatureLayout& layout,
                             const ScalerParams& scaler, int day) {
  require_day_aligned(bundle);
  if (day < 0) fail(ErrorCode::InsufficientData, "negative day index");
  return make_window(bundle, hp, layout, scaler, static_cast<std::size_t>(day) * 24);
}

WindowSplits make_windows(const DatasetBundle& bundle, const Hyperparams& hp, const SplitPlan& plan,
                          const FeatureLayout& layout, const ScalerParams& scaler) {
  hp.validate();
  bundle.validate();
  require_day_aligned(bundle);
  const auto history = static_cast<std::size_t>(hp.history_horizon);
  const auto horizon = static_cast<std::size_t>(hp.forecast_horizon);
  if (bundle.hours() < history + horizon) {
    fail(ErrorCode::InsufficientData, "bundle holds " + std::to_string(bundle.hours()) + " hours, windows need " +
                                          std::to_string(history + horizon));
  }
  const auto stride = static_cast<std::size_t>(hp.stride_hours);
  const auto in_span = [&](const DaySpan& span, std::size_t start) {
    const std::size_t lo = static_cast<std::size_t>(std::max(span.first, 0)) * 24;
    const std::size_t hi = static_cast<std::size_t>(std::max(span.last_exclusive, 0)) * 24;
    return start >= lo && start + horizon <= hi;
  };

  WindowSplits out;
  std::vector<WindowSample> train_span;
  const std::size_t first = (history + stride - 1) / stride * stride;
  for (std::size_t start = first; start + horizon <= bundle.hours(); start += stride) {
    if (in_span(plan.train, start)) {
      train_span.push_back(make_window(bundle, hp, layout, scaler, start));
    } else if (in_span(plan.pool, start)) {
      out.pool.push_back(make_window(bundle, hp, layout, scaler, start));
    } else if (in_span(plan.test, start)) {
      out.test.push_back(make_window(bundle, hp, layout, scaler, start));
    }
  }
  std::size_t n_val = 0;
  if (train_span.size() >= 2 && plan.validation_fraction > 0.0) {
    n_val = static_cast<std::size_t>(std::ceil(plan.validation_fraction * static_cast<double>(train_span.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, train_span.size() - 1);
  }
  const auto cut = train_span.end() - static_cast<std::ptrdiff_t>(n_val);
  out.train.assign(std::make_move_iterator(train_span.begin()), std::make_move_iterator(cut));
  out.validation.assign(std::make_move_iterator(cut), std::make_move_iterator(train_span.end()));
  return out;
}

}  // namespace loadcast
