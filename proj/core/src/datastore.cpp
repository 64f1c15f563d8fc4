#include "loadcast/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "loadcast/error.hpp"

namespace loadcast {

namespace fs = std::filesystem;

bool is_registered_covariate(const std::string& name) {
  return std::ranges::any_of(kCovariateNames, [&](const char* n) { return name == n; });
}

void DatasetBundle::validate() const {
  for (const auto& [name, cov] : covariates) {
    if (!is_registered_covariate(name)) fail(ErrorCode::ConfigError, "unknown covariate: " + name);
    if (cov.start != load.start || cov.step != load.step || cov.size() != load.size()) {
      fail(ErrorCode::ConfigError, "covariate " + name + " is not aligned with the load series");
    }
  }
}

namespace {

bool valid_key(const std::string& key) {
  if (key.empty() || key == "." || key == "..") return false;
  return std::ranges::all_of(key, [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

void require_key(const std::string& key, const char* what) {
  if (!valid_key(key)) fail(ErrorCode::DomainError, std::string("invalid ") + what + ": '" + key + "'");
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string encode_f64_le(std::span<const double> values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return bytes;
}

std::vector<double> decode_f64_le(const std::string& bytes) {
  if (bytes.size() % 8 != 0) fail(ErrorCode::RepositoryError, "truncated series payload");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::RepositoryError, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorCode::RepositoryError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::NotFound, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CsvSchema CsvSchema::parse_mapping(const std::string& mapping) {
  CsvSchema schema;
  for (const auto& entry : split(mapping, ',')) {
    if (entry.empty()) continue;
    const auto eq = entry.find('=');
    ColumnSpec spec;
    spec.column = trim(entry.substr(0, eq));
    std::string target = eq == std::string::npos ? spec.column : trim(entry.substr(eq + 1));
    const auto colon = target.find(':');
    spec.series_id = trim(target.substr(0, colon));
    spec.unit = colon == std::string::npos ? "" : trim(target.substr(colon + 1));
    if (spec.column.empty() || spec.series_id.empty()) {
      fail(ErrorCode::ConfigError, "bad schema entry: " + entry);
    }
    schema.columns.push_back(std::move(spec));
  }
  if (schema.columns.empty()) fail(ErrorCode::ConfigError, "schema maps no columns");
  return schema;
}

Store::Store(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "series");
  fs::create_directories(root_ / "docs");
  load_from_disk();
}

void Store::load_from_disk() {
  for (const auto& entry : fs::directory_iterator(root_ / "series")) {
    if (entry.path().extension() != ".hdr") continue;
    std::istringstream hdr(read_file(entry.path()));
    TimeSeries s;
    std::string line;
    while (std::getline(hdr, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "id") s.id = value;
      else if (key == "start") s.start = parse_timestamp(value);
      else if (key == "step") s.step = Duration{std::stoll(value)};
      else if (key == "unit") s.unit = value;
    }
    fs::path data = entry.path();
    data.replace_extension(".f64");
    s.values = decode_f64_le(read_file(data));
    series_[s.id] = std::move(s);
  }
  for (const auto& kind_dir : fs::directory_iterator(root_ / "docs")) {
    if (!kind_dir.is_directory()) continue;
    auto& docs = documents_[kind_dir.path().filename().string()];
    for (const auto& doc : fs::directory_iterator(kind_dir.path())) {
      if (doc.path().extension() == ".tmp") continue;
      docs[doc.path().filename().string()] = read_file(doc.path());
    }
  }
}

void Store::persist_series(const TimeSeries& series) const {
  if (!persistent()) return;
  std::ostringstream hdr;
  hdr << "id=" << series.id << "\nstart=" << format_timestamp(series.start)
      << "\nstep=" << series.step.seconds << "\nunit=" << series.unit << "\n";
  write_file_atomic(root_ / "series" / (series.id + ".f64"), encode_f64_le(series.values));
  write_file_atomic(root_ / "series" / (series.id + ".hdr"), hdr.str());
}

void Store::persist_append(const TimeSeries& series, std::size_t from) const {
  if (!persistent()) return;
  const auto bytes = encode_f64_le(std::span(series.values).subspan(from));
  std::ofstream out(root_ / "series" / (series.id + ".f64"), std::ios::binary | std::ios::app);
  if (!out) fail(ErrorCode::RepositoryError, "cannot append to series " + series.id);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

IngestReport Store::ingest_csv(std::istream& source, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(source, line)) fail(ErrorCode::EmptyData, "CSV has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split(line, ',');
  const auto column_index = [&](const std::string& name) -> std::size_t {
    const auto it = std::ranges::find(header, name);
    if (it == header.end()) fail(ErrorCode::ConfigError, "CSV lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ts_col = column_index(schema.timestamp_column);
  std::vector<std::size_t> cols;
  for (const auto& spec : schema.columns) {
    require_key(spec.series_id, "series id");
    cols.push_back(column_index(spec.column));
  }

  struct Row {
    Timestamp time;
    std::vector<double> values;  // NaN marks a missing cell
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                      std::to_string(header.size()) + " fields");
    }
    Row row{parse_timestamp(cells[ts_col]), {}};
    for (std::size_t c : cols) {
      const std::string& cell = cells[c];
      if (cell.empty() || cell == "NaN" || cell == "nan") {
        row.values.push_back(std::nan(""));
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
        row.values.push_back(v);
      } catch (const std::logic_error&) {
        fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::EmptyData, "CSV has no data rows");

  std::ranges::stable_sort(rows, {}, &Row::time);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].time == rows[i - 1].time) {
      fail(ErrorCode::DuplicateTimestamp, "duplicate timestamp " + format_timestamp(rows[i].time));
    }
  }
  const std::int64_t step = schema.step.seconds;
  const Timestamp start = rows.front().time;
  for (const auto& row : rows) {
    if ((row.time.seconds - start.seconds) % step != 0) {
      fail(ErrorCode::AlignmentError, "timestamp off the sampling grid: " + format_timestamp(row.time));
    }
  }
  const auto length = static_cast<std::size_t>((rows.back().time.seconds - start.seconds) / step) + 1;

  IngestReport report;
  report.row_count = rows.size();
  std::vector<TimeSeries> built;
  for (std::size_t k = 0; k < schema.columns.size(); ++k) {
    const auto& spec = schema.columns[k];
    TimeSeries s{spec.series_id, start, schema.step, std::vector<double>(length, std::nan("")), spec.unit};
    for (const auto& row : rows) {
      s.values[static_cast<std::size_t>((row.time.seconds - start.seconds) / step)] = row.values[k];
    }
    // Linear interpolation across interior gaps up to max_gap between observations.
    std::optional<std::size_t> prev;
    for (std::size_t i = 0; i < length; ++i) {
      if (std::isnan(s.values[i])) continue;
      if (prev && i - *prev > 1) {
        const std::int64_t gap = static_cast<std::int64_t>(i - *prev) * step;
        if (gap > schema.max_gap.seconds) {
          fail(ErrorCode::GapTooLarge, "series " + spec.series_id + ": gap of " +
                                           std::to_string(gap / kSecondsPerHour) + " h after " +
                                           format_timestamp(s.time_at(*prev)));
        }
        const double a = s.values[*prev];
        const double b = s.values[i];
        for (std::size_t j = *prev + 1; j < i; ++j) {
          const double w = static_cast<double>(j - *prev) / static_cast<double>(i - *prev);
          s.values[j] = a + w * (b - a);
          report.interpolated[spec.series_id].push_back(s.time_at(j));
        }
      }
      prev = i;
    }
    if (std::isnan(s.values.front()) || std::isnan(s.values.back())) {
      fail(ErrorCode::GapTooLarge, "series " + spec.series_id + " has missing leading or trailing values");
    }
    built.push_back(std::move(s));
  }

  for (auto& s : built) {
    report.series_ids.push_back(s.id);
    bool exists = false;
    {
      std::shared_lock lock(mutex_);
      exists = series_.contains(s.id);
    }
    if (exists) {
      std::vector<Point> points;
      points.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) points.push_back({s.time_at(i), s.values[i]});
      append(s.id, points);
    } else {
      put(std::move(s));
    }
  }
  return report;
}

void Store::put(TimeSeries series) {
  require_key(series.id, "series id");
  if (series.step.seconds <= 0) fail(ErrorCode::ConfigError, "series step must be positive");
  for (double v : series.values) {
    if (!std::isfinite(v)) fail(ErrorCode::DomainError, "non-finite value in series " + series.id);
  }
  std::unique_lock lock(mutex_);
  persist_series(series);
  series_[series.id] = std::move(series);
}

bool Store::contains(const std::string& series_id) const {
  std::shared_lock lock(mutex_);
  return series_.contains(series_id);
}

TimeSeries Store::get(const std::string& series_id) const {
  std::shared_lock lock(mutex_);
  const auto it = series_.find(series_id);
  if (it == series_.end()) fail(ErrorCode::NotFound, "unknown series: " + series_id);
  return it->second;
}

TimeSeries Store::query_range(const std::string& series_id, Timestamp start, Timestamp end) const {
  std::shared_lock lock(mutex_);
  const auto it = series_.find(series_id);
  if (it == series_.end()) fail(ErrorCode::NotFound, "unknown series: " + series_id);
  const TimeSeries& s = it->second;
  const std::int64_t step = s.step.seconds;
  if ((start.seconds - s.start.seconds) % step != 0 || (end.seconds - s.start.seconds) % step != 0) {
    fail(ErrorCode::AlignmentError, "query bounds not aligned to the grid of " + series_id);
  }
  if (end < start) fail(ErrorCode::DomainError, "query range end precedes start");
  TimeSeries out{s.id, start, s.step, {}, s.unit};
  const std::int64_t n = static_cast<std::int64_t>(s.size());
  const std::int64_t lo = std::clamp<std::int64_t>((start.seconds - s.start.seconds) / step, 0, n);
  const std::int64_t hi = std::clamp<std::int64_t>((end.seconds - s.start.seconds) / step, 0, n);
  if (hi > lo) {
    out.values.assign(s.values.begin() + lo, s.values.begin() + hi);
    out.start = s.time_at(static_cast<std::size_t>(lo));
  }
  return out;
}

std::size_t Store::append(const std::string& series_id, std::span<const Point> points) {
  std::unique_lock lock(mutex_);
  const auto it = series_.find(series_id);
  if (it == series_.end()) fail(ErrorCode::NotFound, "unknown series: " + series_id);
  TimeSeries& s = it->second;
  const std::int64_t step = s.step.seconds;

  // Validate the whole batch before mutating anything.
  std::int64_t next = static_cast<std::int64_t>(s.size());
  std::vector<double> extension;
  for (const Point& p : points) {
    if ((p.time.seconds - s.start.seconds) % step != 0) {
      fail(ErrorCode::AlignmentError, "point off the grid: " + format_timestamp(p.time));
    }
    if (!std::isfinite(p.value)) fail(ErrorCode::DomainError, "non-finite value appended");
    const std::int64_t idx = (p.time.seconds - s.start.seconds) / step;
    if (idx < 0) fail(ErrorCode::AlignmentError, "point precedes series start");
    if (idx < static_cast<std::int64_t>(s.size())) {
      if (s.values[static_cast<std::size_t>(idx)] != p.value) {
        fail(ErrorCode::ConflictError, "conflicting value at " + format_timestamp(p.time));
      }
      continue;
    }
    if (idx != next) {
      fail(ErrorCode::GapTooLarge, "append is not contiguous at " + format_timestamp(p.time));
    }
    extension.push_back(p.value);
    ++next;
  }
  if (extension.empty()) return s.size();
  const std::size_t from = s.size();
  s.values.insert(s.values.end(), extension.begin(), extension.end());
  try {
    persist_append(s, from);
  } catch (...) {
    s.values.resize(from);
    throw;
  }
  return s.size();
}

std::vector<std::string> Store::list() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : series_) ids.push_back(id);
  return ids;
}

void Store::export_csv(std::ostream& out, const std::vector<std::string>& series_ids) const {
  std::vector<TimeSeries> cols;
  for (const auto& id : series_ids) cols.push_back(get(id));
  if (cols.empty()) return;
  for (const auto& c : cols) {
    if (c.start != cols.front().start || c.step != cols.front().step || c.size() != cols.front().size()) {
      fail(ErrorCode::ShapeError, "series " + c.id + " does not share the export grid");
    }
  }
  out << "timestamp";
  for (const auto& c : cols) out << ',' << c.id;
  out << '\n';
  for (std::size_t i = 0; i < cols.front().size(); ++i) {
    out << format_timestamp(cols.front().time_at(i));
    for (const auto& c : cols) out << ',' << format_double(c.values[i]);
    out << '\n';
  }
}

void Store::put_document(const std::string& kind, const std::string& key, const std::string& text) {
  require_key(kind, "document kind");
  require_key(key, "document key");
  std::unique_lock lock(mutex_);
  if (persistent()) write_file_atomic(root_ / "docs" / kind / key, text);
  documents_[kind][key] = text;
}

std::optional<std::string> Store::get_document(const std::string& kind, const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto k = documents_.find(kind);
  if (k == documents_.end()) return std::nullopt;
  const auto d = k->second.find(key);
  if (d == k->second.end()) return std::nullopt;
  return d->second;
}

std::vector<std::string> Store::list_documents(const std::string& kind) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> keys;
  const auto k = documents_.find(kind);
  if (k != documents_.end()) {
    for (const auto& [key, _] : k->second) keys.push_back(key);
  }
  return keys;
}

void Store::put_bundle(const DatasetBundle& bundle) {
  bundle.validate();
  TimeSeries load = bundle.load;
  load.id = "load";
  put(std::move(load));
  for (const auto& [name, cov] : bundle.covariates) {
    TimeSeries c = cov;
    c.id = name;
    put(std::move(c));
  }
  std::ostringstream events;
  events << "from,to,kind\n";
  for (const auto& e : bundle.events) {
    events << format_timestamp(e.from) << ',' << format_timestamp(e.to) << ',' << e.kind << '\n';
  }
  put_document("provenance", "events.csv", events.str());
}

DatasetBundle Store::bundle() const {
  DatasetBundle b;
  b.load = get("load");
  b.calendar_origin = b.load.start;
  for (const char* name : kCovariateNames) {
    if (contains(name)) b.covariates[name] = get(name);
  }
  if (const auto events = get_document("provenance", "events.csv")) {
    std::istringstream in(*events);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto cells = split(line, ',');
      if (cells.size() != 3) continue;
      b.events.push_back({parse_timestamp(cells[0]), parse_timestamp(cells[1]), cells[2]});
    }
  }
  // Covariates may be longer than the load (e.g. weather known ahead); trim to a common grid.
  for (auto& [name, cov] : b.covariates) {
    if (cov.start == b.load.start && cov.step == b.load.step && cov.size() > b.load.size()) {
      cov.values.resize(b.load.size());
    }
  }
  b.validate();
  return b;
}

void SyntheticConfig::validate() const {
  if (n_days < 14) fail(ErrorCode::ConfigError, "n_days must be at least 14");
  if (base_load < 0 || daily_amplitude < 0 || temp_sensitivity < 0) {
    fail(ErrorCode::ConfigError, "amplitudes must be non-negative");
  }
  if (!(weekly_weekend_factor > 0 && weekly_weekend_factor <= 1.0)) {
    fail(ErrorCode::ConfigError, "weekly_weekend_factor must lie in (0, 1]");
  }
  if (noise_sigma_weekday < 0 || noise_sigma_weekend < 0) {
    fail(ErrorCode::ConfigError, "noise sigmas must be non-negative");
  }
  if (rare_event_count < 0 || rare_event_count * 3 > n_days) {
    fail(ErrorCode::ConfigError, "rare_event_count out of range");
  }
  if (start.seconds % kSecondsPerDay != 0) fail(ErrorCode::ConfigError, "start must be midnight UTC");
}

DatasetBundle generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t hours = static_cast<std::size_t>(config.n_days) * 24;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  DatasetBundle bundle;
  bundle.calendar_origin = config.start;
  const Duration step{kSecondsPerHour};

  // Heat waves: 48 h windows starting at midnight, non-overlapping, after the
  // first week. Drawn from their own stream so the event count leaves the
  // weather and noise draws untouched.
  std::mt19937_64 event_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<int> event_days;
  std::uniform_int_distribution<int> day_pick(7, config.n_days - 2);
  while (static_cast<int>(event_days.size()) < config.rare_event_count) {
    const int d = day_pick(event_rng);
    const bool clash = std::ranges::any_of(event_days, [&](int e) { return std::abs(e - d) < 3; });
    if (!clash) event_days.push_back(d);
  }
  std::ranges::sort(event_days);
  for (int d : event_days) {
    const Timestamp from = config.start.plus_days(d);
    bundle.events.push_back({from, from.plus_hours(48), "heat_wave"});
  }

  std::vector<double> temp(hours), wind(hours), wind_dir(hours), rain(hours), load(hours);
  double temp_noise = 0.0;
  double wind_noise = 0.0;
  double direction = 360.0 * uniform(rng);
  for (std::size_t h = 0; h < hours; ++h) {
    const Timestamp t = config.start.plus_hours(static_cast<std::int64_t>(h));
    const CalendarFields cal = calendar_fields(t);
    temp_noise = 0.9 * temp_noise + 0.5 * normal(rng);
    const double seasonal = 15.0 - 4.0 * std::cos(two_pi * (cal.day_of_year - 15) / 365.0);
    const double daily = 6.0 * std::sin(two_pi * (cal.hour - 9) / 24.0);
    double tc = seasonal + daily + temp_noise;
    for (const auto& e : bundle.events) {
      if (t >= e.from && t < e.to) tc += 8.0;
    }
    temp[h] = tc;

    wind_noise = 0.95 * wind_noise + 0.6 * normal(rng);
    wind[h] = std::max(0.0, 5.0 + 2.0 * wind_noise);
    direction = std::fmod(direction + 10.0 * normal(rng) + 360.0, 360.0);
    wind_dir[h] = direction;
    const double wet = uniform(rng);
    const double amount = -2.0 * std::log(1.0 - uniform(rng));
    rain[h] = wet < 0.08 ? amount : 0.0;

    const bool weekend = cal.day_of_week >= 5;
    const double phase = two_pi / 3.0;  // peak at 14:00
    double cycle = config.daily_amplitude * std::sin(two_pi * cal.hour / 24.0 - phase);
    if (weekend) cycle *= config.weekly_weekend_factor;
    const double dt = tc - kComfortTemperature;
    const double sigma = weekend ? config.noise_sigma_weekend : config.noise_sigma_weekday;
    load[h] = config.base_load + cycle + config.temp_sensitivity * dt * dt + sigma * normal(rng);
  }

  bundle.load = TimeSeries{"load", config.start, step, std::move(load), "MW"};
  bundle.covariates["temperature"] = TimeSeries{"temperature", config.start, step, std::move(temp), "degC"};
  bundle.covariates["wind_speed"] = TimeSeries{"wind_speed", config.start, step, std::move(wind), "m/s"};
  bundle.covariates["wind_direction"] =
      TimeSeries{"wind_direction", config.start, step, std::move(wind_dir), "deg"};
  bundle.covariates["precipitation"] =
      TimeSeries{"precipitation", config.start, step, std::move(rain), "mm"};
  return bundle;
}

}  // namespace loadcast
