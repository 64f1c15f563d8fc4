#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loadcast/datastore.hpp"
#include "loadcast/matrix.hpp"
#include "loadcast/metrics.hpp"
#include "loadcast/network.hpp"

namespace loadcast {

struct Hyperparams {
  int history_horizon = 168;
  int forecast_horizon = 24;
  int lstm_hidden = 64;
  int lstm_layers = 1;
  double fc_dropout = 0.4;
  double lstm_dropout = 0.3;
  double leaky_relu_alpha = 0.1;
  int max_epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int early_stop_patience = 8;
  double variance_floor = 1e-6;
  /// Hours between consecutive window starts.
  int stride_hours = 24;
  /// Feed (scaled) weather to the decoder as a perfect day-ahead forecast.
  bool decoder_weather = true;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip_norm = 5.0;
  /// Display timezone offset for calendar features.
  int utc_offset_hours = 0;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const Hyperparams&) const = default;
};

/// Per-feature MinMax scaling fitted on the training span.
struct ScalerParams {
  std::vector<std::string> names;
  std::vector<double> min;
  std::vector<double> max;
  std::vector<bool> degenerate;

  std::size_t index_of(const std::string& name) const;
  /// (x - min) / (max - min), no clipping; a constant feature maps to x - min.
  double transform(std::size_t feature, double x) const;
  double inverse(std::size_t feature, double scaled) const;
  /// Multiplier from scaled to original units.
  double range(std::size_t feature) const;

  bool operator==(const ScalerParams&) const = default;
};

/// Throws EmptyData for no features or no rows.
ScalerParams fit_scaler(std::span<const std::string> names, const std::vector<std::vector<double>>& columns);

/// Calendar encoding: sin/cos of hour-of-day, day-of-week and month.
std::vector<double> calendar_features(Timestamp t, std::int64_t utc_offset_seconds = 0);
inline constexpr std::size_t kCalendarFeatures = 6;

struct WindowSample {
  Matrix encoder;               // history x F_enc
  Matrix decoder;               // horizon x F_dec
  std::vector<double> target;   // horizon, scaled load
  Timestamp target_start;
  double weight = 1.0;
};

struct DaySpan {
  int first = 0;           // day index from the bundle start
  int last_exclusive = 0;

  bool contains(int day) const { return day >= first && day < last_exclusive; }
  int days() const { return last_exclusive - first; }
};

/// Chronological partition by whole days. Validation is the last
/// `validation_fraction` of training-span windows.
struct SplitPlan {
  DaySpan train;
  DaySpan pool;
  DaySpan test;
  double validation_fraction = 0.1;

  /// Test = last `test_days`, pool = the `pool_days` before it, train = the rest.
  static SplitPlan chronological(int total_days, int pool_days, int test_days);
};

struct WindowSplits {
  std::vector<WindowSample> train;
  std::vector<WindowSample> validation;
  std::vector<WindowSample> pool;
  std::vector<WindowSample> test;
};

/// Input layout derived from the bundle and hyperparameters.
struct FeatureLayout {
  std::vector<std::string> scaled;     // "load" first, then covariates
  std::vector<std::string> decoder_weather;
  std::size_t encoder_features() const { return scaled.size() + kCalendarFeatures; }
  std::size_t decoder_features() const { return kCalendarFeatures + decoder_weather.size(); }

  bool operator==(const FeatureLayout&) const = default;
};

FeatureLayout feature_layout(const DatasetBundle& bundle, const Hyperparams& hp);

/// Fits the scaler on the hours of the training span.
ScalerParams fit_scaler(const DatasetBundle& bundle, const FeatureLayout& layout, const DaySpan& train);

/// Windows for the target starting at hour `start_hour`. Throws InsufficientData.
WindowSample make_window(const DatasetBundle& bundle, const Hyperparams& hp, const FeatureLayout& layout,
                         const ScalerParams& scaler, std::size_t start_hour);
/// The day-aligned window whose target is day `day`.
WindowSample make_day_window(const DatasetBundle& bundle, const Hyperparams& hp, const FeatureLayout& layout,
                             const ScalerParams& scaler, int day);

/// Sliding windows assigned to the span containing their whole target.
/// Throws InsufficientData if the bundle is shorter than history + horizon.
WindowSplits make_windows(const DatasetBundle& bundle, const Hyperparams& hp, const SplitPlan& plan,
                          const FeatureLayout& layout, const ScalerParams& scaler);

/// Mean Gaussian negative log likelihood. Throws VarianceError below the floor.
double gnll_loss(std::span<const double> mu, std::span<const double> sigma2, std::span<const double> y,
                 double variance_floor = 1e-6);

struct EpochRecord {
  int epoch = 0;  // 0 = before any update
  double train_gnll = 0.0;
  double validation_gnll = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct Provenance {
  std::string dataset_start;
  std::string dataset_end;
  std::uint64_t seed = 0;
  std::string parent_id;  // empty for an initial training
  int epochs_run = 0;
  int best_epoch = 0;
  std::size_t training_samples = 0;
  std::size_t validation_samples = 0;

  bool operator==(const Provenance&) const = default;
};

struct TrainedModel {
  Hyperparams hp;
  FeatureLayout layout;
  ScalerParams scaler;
  NetworkParams params;
  std::vector<EpochRecord> log;
  Provenance provenance;

  NetworkShape shape() const;
  /// Content hash of the serialized model: "m-" + 16 hex digits.
  std::string id() const;

  bool operator==(const TrainedModel&) const = default;
};

struct TrainOptions {
  /// Warm start from these weights instead of a fresh initialization. The
  /// checkpoint is then chosen among epochs >= 1 only.
  const NetworkParams* initial = nullptr;
  /// Overrides hp.max_epochs when positive.
  int epochs = 0;
  std::string parent_id;
  /// Called after every epoch with (epoch, max epochs).
  std::function<void(int, int)> on_epoch;
};

/// Adam on the weighted mean GNLL with per-epoch validation, early stopping
/// and best-validation checkpointing. Deterministic given hp.seed.
/// Throws DivergenceError when a batch loss is non-finite or exceeds 1e6.
TrainedModel train(const std::vector<WindowSample>& train_samples,
                   const std::vector<WindowSample>& validation_samples, const Hyperparams& hp,
                   const FeatureLayout& layout, const ScalerParams& scaler, const TrainOptions& options = {});

/// Packs samples into a graph batch.
Batch make_batch(std::span<const WindowSample* const> samples, std::size_t history, std::size_t horizon);

/// Scaled-space mean and variance for a set of samples, dropout disabled.
struct ScaledPrediction {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> variance;
};
ScaledPrediction predict_scaled(const TrainedModel& model, const std::vector<WindowSample>& samples);

/// Mean GNLL (scaled space) of a model on labelled samples.
double evaluate_gnll(const TrainedModel& model, const std::vector<WindowSample>& samples);
double evaluate_gnll(const NetworkParams& params, const Hyperparams& hp, const FeatureLayout& layout,
                     const std::vector<WindowSample>& samples);

struct ForecastStep {
  Timestamp time;
  double mu = 0.0;
  double sigma = 0.0;
  double lower = 0.0;
  double upper = 0.0;

  bool operator==(const ForecastStep&) const = default;
};

struct ForecastRecord {
  Timestamp issue_time;
  std::string model_id;
  double level = 0.95;
  std::vector<ForecastStep> steps;

  double max_sigma() const;
  /// Recomputes bounds at another level.
  ForecastRecord at_level(double level) const;

  bool operator==(const ForecastRecord&) const = default;
};

/// Symmetric Gaussian interval per step: mu -+ z * max(sigma, min_sigma).
std::vector<std::pair<double, double>> prediction_interval(std::span<const double> mu,
                                                           std::span<const double> sigma, double level,
                                                           double min_sigma = 0.0);

/// Day-ahead forecast from a scaled window (target may be unknown).
/// Logs a scale warning when inputs fall outside [-1, 2].
ForecastRecord predict_day_ahead(const TrainedModel& model, const WindowSample& window, double level = 0.95);

/// Batched form of predict_day_ahead without the input checks.
std::vector<ForecastRecord> predict_many(const TrainedModel& model, const std::vector<WindowSample>& windows,
                                         double level = 0.95);

/// Scores a model on labelled windows in load units (MW for the load series).
metrics::MetricsReport evaluate_model(const TrainedModel& model, const std::vector<WindowSample>& samples,
                                      double level = 0.95);

/// Smallest sigma the model can emit, in load units.
double sigma_floor(const TrainedModel& model);

/// Text document of a forecast record, one CSV block with fixed columns.
std::string forecast_to_text(const ForecastRecord& record);
ForecastRecord forecast_from_text(const std::string& text);

/// Stores the record in the "forecasts" document area, keyed by model and date.
void persist_forecast(Store& store, const ForecastRecord& record);
std::optional<ForecastRecord> load_forecast(const Store& store, const std::string& model_id,
                                            const std::string& date);

inline constexpr int kModelFormatVersion = 1;

/// Self-describing single file: magic line, version, JSON header, then the
/// weights as little-endian float64.
std::string serialize_model(const TrainedModel& model);
/// Throws VersionError for a newer format, ParseError for a malformed file.
TrainedModel deserialize_model(const std::string& bytes);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

std::string hyperparams_to_json(const Hyperparams& hp);
/// Missing keys keep their defaults. Throws ConfigError on bad values.
Hyperparams hyperparams_from_json(const std::string& text);

}  // namespace loadcast
