#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "loadcast/time.hpp"

namespace loadcast {

/// Uniformly sampled series: timestamp(i) = start + i * step.
struct TimeSeries {
  std::string id;
  Timestamp start;
  Duration step;
  std::vector<double> values;
  std::string unit;

  std::size_t size() const { return values.size(); }
  Timestamp time_at(std::size_t i) const {
    return Timestamp{start.seconds + static_cast<std::int64_t>(i) * step.seconds};
  }
  /// One past the last sample.
  Timestamp end() const { return time_at(values.size()); }
};

struct Point {
  Timestamp time;
  double value = 0.0;
};

/// Registry of covariate names a bundle may carry.
inline constexpr const char* kCovariateNames[] = {"temperature", "wind_speed", "wind_direction",
                                                  "precipitation"};

bool is_registered_covariate(const std::string& name);

struct EventWindow {
  Timestamp from;
  Timestamp to;  // exclusive
  std::string kind;
};

struct DatasetBundle {
  TimeSeries load;
  std::map<std::string, TimeSeries> covariates;
  Timestamp calendar_origin;
  /// Injected events (synthetic provenance); empty for ingested data.
  std::vector<EventWindow> events;

  /// Checks shared start/step/length and the covariate registry. Throws ConfigError.
  void validate() const;
  std::size_t hours() const { return load.size(); }
  std::size_t days() const { return load.size() / 24; }
};

struct ColumnSpec {
  std::string column;
  std::string series_id;
  std::string unit;
};

struct CsvSchema {
  std::string timestamp_column = "timestamp";
  std::vector<ColumnSpec> columns;
  Duration step{kSecondsPerHour};
  Duration max_gap{3 * kSecondsPerHour};

  /// "load=load:MW,temp=temperature:degC" -> column `load` into series `load` (MW) ...
  static CsvSchema parse_mapping(const std::string& mapping);
};

struct IngestReport {
  std::vector<std::string> series_ids;
  std::size_t row_count = 0;
  /// Grid slots filled by linear interpolation, per series.
  std::map<std::string, std::vector<Timestamp>> interpolated;
};

/// Read side of the repository, as consumed by the active-learning loop.
class SeriesRepository {
 public:
  virtual ~SeriesRepository() = default;

  /// Points with start <= t < end. Throws NotFound, AlignmentError.
  virtual TimeSeries query_range(const std::string& series_id, Timestamp start,
                                 Timestamp end) const = 0;
  virtual bool contains(const std::string& series_id) const = 0;
  /// Whole series (snapshot copy). Throws NotFound.
  virtual TimeSeries get(const std::string& series_id) const = 0;
};

/// Embedded file-backed store keyed by (series_id, timestamp) plus a small
/// keyed document area for forecasts, reports and annotations.
///
/// One writer, many readers; readers receive snapshot copies. A default
/// constructed store lives in memory only.
class Store : public SeriesRepository {
 public:
  Store() = default;
  /// Opens (or creates) the store rooted at `root`, loading persisted series.
  explicit Store(std::filesystem::path root);

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  bool persistent() const { return !root_.empty(); }
  const std::filesystem::path& root() const { return root_; }

  IngestReport ingest_csv(std::istream& source, const CsvSchema& schema);

  /// Creates or replaces a series.
  void put(TimeSeries series);

  TimeSeries query_range(const std::string& series_id, Timestamp start,
                         Timestamp end) const override;
  bool contains(const std::string& series_id) const override;
  TimeSeries get(const std::string& series_id) const override;

  /// Extends a series with contiguous points; identical overlap is a no-op.
  /// Returns the new length. Throws ConflictError, GapTooLarge, AlignmentError.
  std::size_t append(const std::string& series_id, std::span<const Point> points);

  std::vector<std::string> list() const;

  /// Writes the named series (sharing one grid) as CSV with a `timestamp` column.
  void export_csv(std::ostream& out, const std::vector<std::string>& series_ids) const;

  void put_document(const std::string& kind, const std::string& key, const std::string& text);
  std::optional<std::string> get_document(const std::string& kind, const std::string& key) const;
  /// Keys of a document kind, sorted.
  std::vector<std::string> list_documents(const std::string& kind) const;

  /// Stores every member series of a bundle under its canonical id
  /// ("load" and the covariate names) and records its events.
  void put_bundle(const DatasetBundle& bundle);
  /// Reassembles a bundle from the canonical series ids.
  DatasetBundle bundle() const;

 private:
  void persist_series(const TimeSeries& series) const;
  void persist_append(const TimeSeries& series, std::size_t from) const;
  void load_from_disk();

  std::filesystem::path root_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, TimeSeries> series_;
  std::map<std::string, std::map<std::string, std::string>> documents_;
};

/// Writes `text` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

struct SyntheticConfig {
  int n_days = 120;
  double base_load = 5000.0;
  double daily_amplitude = 1200.0;
  double weekly_weekend_factor = 0.8;
  double temp_sensitivity = 6.0;
  double noise_sigma_weekday = 60.0;
  double noise_sigma_weekend = 180.0;
  int rare_event_count = 2;
  std::uint64_t seed = 1;
  Timestamp start{1609459200};  // 2021-01-01T00:00:00Z

  /// Throws ConfigError.
  void validate() const;
};

inline constexpr double kComfortTemperature = 20.0;

/// Deterministic load/weather scenario: daily load cycle damped on weekends,
/// U-shaped temperature response, weekday/weekend noise levels and injected
/// 48 h heat waves (+8 degC) recorded in `events`.
DatasetBundle generate_synthetic(const SyntheticConfig& config);

}  // namespace loadcast
