#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "loadcast/active_learning.hpp"
#include "loadcast/datastore.hpp"
#include "loadcast/forecaster.hpp"
#include "loadcast/metrics.hpp"

namespace loadcast {

struct EngineOptions {
  /// Empty keeps everything in memory.
  std::filesystem::path data_dir;
  /// Logical "now" used for audit timestamps and future-range checks.
  std::function<Timestamp()> now;
  /// Monotonic seconds used for wall-time fields.
  std::function<double()> wall_seconds;
};

struct TrainRequest {
  Hyperparams hp;
  int pool_days = 20;
  int test_days = 20;
};

struct TrainSummary {
  std::string model_id;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  std::size_t training_samples = 0;
  std::size_t validation_samples = 0;
  /// Test-span GNLL of the untrained initialization and of the result;
  /// absent when the test span holds no windows.
  std::optional<double> test_gnll_initial;
  std::optional<double> test_gnll_final;
  double wall_time_s = 0.0;
};

struct CycleRequest {
  double level = 0.95;
  bool full_retrain = false;
};

struct UncertaintyFlag {
  std::string date;
  std::optional<double> max_sigma;  // absent when no forecast is stored for the day
  double theta = 0.0;
  bool above_theta = false;
  bool operator_flagged = false;
  std::vector<std::string> annotation_ids;
};

struct MetricsComparison {
  std::string before_label;
  std::string after_label;
  std::string before_model;
  std::string after_model;
  metrics::MetricsReport before;
  metrics::MetricsReport after;

  /// Two CSV rows under the MetricsReport header.
  std::string to_csv() const;
};

struct BenchRow {
  std::string model;
  metrics::MetricsReport metrics;
};

struct SweepRow {
  double theta = 0.0;
  std::size_t queried = 0;
  std::size_t days = 0;
  std::optional<metrics::MetricsReport> after;  // only with retraining
};

/// Persistent workspace tying the store, trained models, the threshold
/// policy, annotations and cycle reports together. Every public method is
/// safe to call from several threads; train and run_cycle are exclusive and
/// throw Busy while another one runs.
class Engine {
 public:
  explicit Engine(EngineOptions options = {});
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // data
  DatasetBundle synthesize(const SyntheticConfig& config);
  IngestReport ingest(std::istream& csv, const CsvSchema& schema);
  bool has_data() const;
  DatasetBundle bundle() const;
  std::vector<EventWindow> events() const;
  Store& store() { return *store_; }

  // models
  TrainSummary train(const TrainRequest& request, const std::function<void(int, int)>& on_epoch = {});
  std::optional<std::string> active_model_id() const;
  std::vector<std::string> model_ids() const;
  /// Throws NotFound.
  TrainedModel model(const std::string& id) const;
  /// Throws NoModel.
  TrainedModel active_model() const;
  std::optional<SplitPlan> split_plan() const;

  // forecasts
  /// Stored forecast of the active model for `date`, produced on demand.
  /// Throws NoModel, DomainError (level), InsufficientData (no context).
  ForecastRecord forecast(const std::string& date, double level = 0.95);
  /// Days in [from, to] whose stored max sigma exceeds theta, plus
  /// operator-flagged days. Throws DomainError for a reversed range.
  std::vector<UncertaintyFlag> uncertainty_flags(const std::string& from, const std::string& to) const;

  // policy and annotations
  al::ThresholdPolicy threshold() const;
  al::ThresholdPolicy set_threshold(double theta, const std::string& rationale, const std::string& actor = "operator");
  al::FlagResult flag_event(Timestamp from, Timestamp to, const std::string& note,
                            const std::string& actor = "operator");
  std::vector<al::Annotation> annotations() const;

  // active learning
  /// One cycle; the new model, augmented days and report are installed
  /// together only after the whole cycle succeeded.
  al::ALCycleReport run_cycle(const CycleRequest& request = {}, const std::function<void(int, int)>& on_epoch = {});
  /// Throws NotFound.
  al::ALCycleReport cycle_report(int cycle) const;
  int cycle_count() const;
  /// Base training windows plus augmented days of the active state.
  std::size_t training_set_size() const;
  std::set<int> augmented_days() const;
  /// Replaces the repository consulted for actuals (fault injection in tests).
  void set_actuals_repository(std::shared_ptr<const SeriesRepository> repository);

  // analysis
  /// Test-span metrics of a model; an empty id means the active model.
  metrics::MetricsReport evaluate(const std::string& model_id, std::optional<DaySpan> span = std::nullopt,
                                  double level = 0.95) const;
  MetricsComparison compare_models(const std::string& before_id, const std::string& after_id) const;
  MetricsComparison compare_cycle(int cycle) const;
  /// Day-ahead comparison on the test span: "rnn", "seasonal", "ar", "sarima".
  std::vector<BenchRow> bench(const std::vector<std::string>& models, double level = 0.95) const;
  /// Query counts for each theta over the pool forecasts of the active model;
  /// with `retrain` each theta also runs a detached cycle (nothing installed).
  std::vector<SweepRow> sweep(const std::vector<double>& thetas, bool retrain = false);

 private:
  struct State;

  void save_state() const;
  void load_state();
  void store_model(const TrainedModel& model, const std::string& bytes);
  TrainedModel model_locked(const std::string& id) const;
  DatasetBundle bundle_locked() const;
  Timestamp now() const;
  double wall() const;
  std::unique_lock<std::mutex> acquire_job();

  EngineOptions options_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<State> state_;
  std::shared_ptr<const SeriesRepository> actuals_;
  mutable std::mutex mutex_;
  std::mutex job_mutex_;
  mutable std::map<std::string, TrainedModel> model_cache_;
};

}  // namespace loadcast
