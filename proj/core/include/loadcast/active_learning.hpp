#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "loadcast/datastore.hpp"
#include "loadcast/forecaster.hpp"
#include "loadcast/metrics.hpp"

namespace loadcast::al {

struct ThresholdChange {
  Timestamp at;
  double theta = 0.0;
  std::string rationale;
  std::string actor;

  bool operator==(const ThresholdChange&) const = default;
};

/// Uncertainty threshold in load units (sigma), with an append-only audit trail.
struct ThresholdPolicy {
  static constexpr double kDefaultTheta = 1000.0;

  double theta = kDefaultTheta;
  bool set_by_operator = false;
  std::vector<ThresholdChange> history;

  std::string history_csv() const;
  bool operator==(const ThresholdPolicy&) const = default;
};

/// Appends to the history and replaces the active theta. Throws DomainError for theta <= 0.
ThresholdPolicy update_threshold(ThresholdPolicy policy, double theta, std::string rationale, std::string actor,
                                 Timestamp at);

struct QueryPoint {
  Timestamp time;
  double sigma = 0.0;

  bool operator==(const QueryPoint&) const = default;
};

struct QuerySet {
  std::vector<QueryPoint> points;  // sorted, unique timestamps, sigma > theta_used
  double theta_used = 0.0;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

/// Q = {t | sigma_t > theta}. Where the archive holds a timestamp more than
/// once the largest sigma is used. Timestamps whose day start is listed in
/// `training_days` are excluded.
QuerySet select_queries(std::span<const ForecastRecord> archive, const ThresholdPolicy& policy,
                        const std::set<Timestamp>& training_days = {});

struct LabeledPoint {
  Timestamp time;
  double actual = 0.0;
};

struct Acquisition {
  std::vector<LabeledPoint> labeled;
  std::vector<Timestamp> unavailable;
  bool no_op() const { return labeled.empty() && unavailable.empty(); }
};

/// Looks up the actual load for every query; missing ones are reported in
/// `unavailable`. Any repository failure surfaces as RepositoryError.
Acquisition acquire_actuals(const QuerySet& queries, const SeriesRepository& repository,
                            const std::string& load_series = "load");

inline constexpr double kQueriedSampleWeight = 2.0;

struct AugmentResult {
  TrainedModel child;
  std::vector<int> added_days;  // day indices from the bundle start
};

/// Adds one weighted day window per distinct day holding a labelled point or
/// listed in `forced_days`, skipping days in `excluded_days`, then retrains.
/// Throws NothingToLearn when no new complete window can be built.
AugmentResult augment_and_retrain(const TrainedModel& parent, const std::vector<WindowSample>& base_train,
                                  const std::vector<WindowSample>& validation,
                                  std::span<const LabeledPoint> points, std::span<const int> forced_days,
                                  const std::set<int>& excluded_days, const DatasetBundle& bundle,
                                  bool full_retrain = false,
                                  const std::function<void(int, int)>& on_epoch = {});

struct Annotation {
  std::string id;
  Timestamp from;
  Timestamp to;  // exclusive
  std::string note;
  std::string actor;

  bool operator==(const Annotation&) const = default;
};

struct FlagResult {
  Annotation annotation;
  bool already_flagged = false;
};

/// Validates the range against [data_start, data_end) and records the
/// annotation unless an identical range is already flagged.
/// Throws DomainError for empty, future or out-of-data ranges.
FlagResult flag_rare_event(std::vector<Annotation>& annotations, Timestamp from, Timestamp to, std::string note,
                           std::string actor, Timestamp data_start, Timestamp data_end);

/// Day indices (from `origin`) touched by the annotations.
std::vector<int> annotated_days(std::span<const Annotation> annotations, Timestamp origin);

struct ALCycleReport {
  int cycle = 0;
  double theta = 0.0;
  std::size_t queried = 0;
  std::size_t acquired = 0;
  std::size_t unavailable = 0;
  std::vector<std::string> added_days;    // YYYY-MM-DD
  std::vector<std::string> flagged_days;  // forced by operator annotations
  bool no_op = false;
  std::string note;
  metrics::MetricsReport metrics_before;
  metrics::MetricsReport metrics_after;
  std::string parent_id;
  std::string child_id;
  double wall_time_s = 0.0;

  /// Key-value header followed by a metrics CSV block.
  std::string to_text() const;
  static ALCycleReport from_text(const std::string& text);
};

/// Everything one cycle reads. Nothing here is modified; the caller installs
/// the outcome only when run_cycle returns.
struct CycleInputs {
  const TrainedModel* model = nullptr;
  const SeriesRepository* repository = nullptr;
  Store* forecast_store = nullptr;  // forecasts are persisted here when set
  const DatasetBundle* bundle = nullptr;
  SplitPlan plan;
  ThresholdPolicy policy;
  std::set<int> existing_days;  // days already covered by augmented windows
  std::vector<int> forced_days;
  int cycle = 1;
  double level = 0.95;
  bool full_retrain = false;
  std::function<void(int, int)> on_epoch;
  std::function<double()> clock;  // seconds; wall time is 0 when unset
};

struct CycleOutcome {
  ALCycleReport report;
  std::optional<TrainedModel> child;  // empty for a no-op cycle
  std::vector<int> added_days;
  std::vector<ForecastRecord> forecasts;
};

/// predict -> store -> select -> acquire -> augment -> retrain -> evaluate.
/// Metrics before and after use the same test-span windows.
CycleOutcome run_cycle(const CycleInputs& inputs);

/// Forecasts for every labelled or unlabelled day window in a span.
std::vector<ForecastRecord> forecast_span(const TrainedModel& model, const DatasetBundle& bundle, const DaySpan& span,
                                          double level);

}  // namespace loadcast::al
