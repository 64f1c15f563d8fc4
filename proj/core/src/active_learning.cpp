#include "loadcast/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "loadcast/error.hpp"

namespace loadcast::al {

namespace {

std::string csv_escape(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += "\"\"";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out + "\"";
}

int day_index(Timestamp t, Timestamp origin) {
  return static_cast<int>(std::floor(static_cast<double>(t.seconds - origin.seconds) / kSecondsPerDay));
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string ThresholdPolicy::history_csv() const {
  std::ostringstream out;
  out << "timestamp,theta,actor,rationale\n";
  for (const auto& h : history) {
    out << format_timestamp(h.at) << ',' << metrics::format_number(h.theta) << ',' << csv_escape(h.actor) << ','
        << csv_escape(h.rationale) << '\n';
  }
  return out.str();
}

ThresholdPolicy update_threshold(ThresholdPolicy policy, double theta, std::string rationale, std::string actor,
                                 Timestamp at) {
  if (!(theta > 0.0) || !std::isfinite(theta)) fail(ErrorCode::DomainError, "theta must be a positive number");
  policy.history.push_back({at, theta, std::move(rationale), std::move(actor)});
  policy.theta = theta;
  policy.set_by_operator = true;
  return policy;
}

QuerySet select_queries(std::span<const ForecastRecord> archive, const ThresholdPolicy& policy,
                        const std::set<Timestamp>& training_days) {
  std::map<Timestamp, double> sigma_at;
  for (const auto& record : archive) {
    for (const auto& step : record.steps) {
      auto [it, inserted] = sigma_at.try_emplace(step.time, step.sigma);
      if (!inserted) it->second = std::max(it->second, step.sigma);
    }
  }
  QuerySet q;
  q.theta_used = policy.theta;
  for (const auto& [time, sigma] : sigma_at) {
    if (!(sigma > policy.theta)) continue;
    if (training_days.contains(floor_to_day(time))) continue;
    q.points.push_back({time, sigma});
  }
  return q;
}

Acquisition acquire_actuals(const QuerySet& queries, const SeriesRepository& repository,
                            const std::string& load_series) {
  Acquisition out;
  if (queries.empty()) return out;
  TimeSeries load;
  try {
    load = repository.get(load_series);
  } catch (const std::exception& e) {
    fail(ErrorCode::RepositoryError, std::string("repository unavailable: ") + e.what());
  }
  for (const auto& q : queries.points) {
    const std::int64_t offset = q.time.seconds - load.start.seconds;
    if (offset < 0 || offset % load.step.seconds != 0 ||
        offset / load.step.seconds >= static_cast<std::int64_t>(load.size())) {
      out.unavailable.push_back(q.time);
      continue;
    }
    out.labeled.push_back({q.time, load.values[static_cast<std::size_t>(offset / load.step.seconds)]});
  }
  return out;
}

AugmentResult augment_and_retrain(const TrainedModel& parent, const std::vector<WindowSample>& base_train,
                                  const std::vector<WindowSample>& validation, std::span<const LabeledPoint> points,
                                  std::span<const int> forced_days, const std::set<int>& excluded_days,
                                  const DatasetBundle& bundle, bool full_retrain,
                                  const std::function<void(int, int)>& on_epoch) {
  std::set<int> days;
  for (const auto& p : points) days.insert(day_index(p.time, bundle.load.start));
  days.insert(forced_days.begin(), forced_days.end());

  AugmentResult result;
  std::vector<WindowSample> samples = base_train;
  const int history_days = (parent.hp.history_horizon + 23) / 24;
  for (int day : days) {
    if (excluded_days.contains(day) || day < history_days) continue;
    if (static_cast<std::size_t>(day + 1) * 24 > bundle.hours()) continue;
    WindowSample w = make_day_window(bundle, parent.hp, parent.layout, parent.scaler, day);
    if (w.target.size() != static_cast<std::size_t>(parent.hp.forecast_horizon)) continue;
    w.weight = kQueriedSampleWeight;
    samples.push_back(std::move(w));
    result.added_days.push_back(day);
  }
  if (result.added_days.empty()) fail(ErrorCode::NothingToLearn, "no new complete windows for the queried days");

  TrainOptions opts;
  opts.parent_id = parent.id();
  opts.on_epoch = on_epoch;
  if (!full_retrain) {
    opts.initial = &parent.params;
    opts.epochs = std::max(1, parent.hp.max_epochs / 2);
  }
  result.child = train(samples, validation, parent.hp, parent.layout, parent.scaler, opts);
  return result;
}

FlagResult flag_rare_event(std::vector<Annotation>& annotations, Timestamp from, Timestamp to, std::string note,
                           std::string actor, Timestamp data_start, Timestamp data_end) {
  if (!(from < to)) fail(ErrorCode::DomainError, "event range is empty or reversed");
  if (from < data_start) fail(ErrorCode::DomainError, "event range starts before the stored data");
  if (to > data_end) fail(ErrorCode::DomainError, "event range extends past the stored data (future)");
  for (const auto& a : annotations) {
    if (a.from == from && a.to == to) return {a, true};
  }
  char id[32];
  std::snprintf(id, sizeof id, "ev-%04zu", annotations.size() + 1);
  annotations.push_back({id, from, to, std::move(note), std::move(actor)});
  return {annotations.back(), false};
}

std::vector<int> annotated_days(std::span<const Annotation> annotations, Timestamp origin) {
  std::set<int> days;
  for (const auto& a : annotations) {
    const int first = day_index(a.from, origin);
    const int last = day_index(Timestamp{a.to.seconds - 1}, origin);
    for (int d = first; d <= last; ++d) days.insert(d);
  }
  return {days.begin(), days.end()};
}

std::string ALCycleReport::to_text() const {
  std::ostringstream out;
  out << "cycle=" << cycle << "\n";
  out << "theta=" << metrics::format_number(theta) << "\n";
  out << "queried=" << queried << "\n";
  out << "acquired=" << acquired << "\n";
  out << "unavailable=" << unavailable << "\n";
  out << "added_days=" << join(added_days, ';') << "\n";
  out << "flagged_days=" << join(flagged_days, ';') << "\n";
  out << "no_op=" << (no_op ? "true" : "false") << "\n";
  out << "note=" << note << "\n";
  out << "parent_id=" << parent_id << "\n";
  out << "child_id=" << child_id << "\n";
  out << "wall_time_s=" << metrics::format_number(wall_time_s) << "\n";
  out << "[metrics]\n";
  out << metrics::MetricsReport::csv_header() << "\n";
  out << metrics_before.to_csv_row("before") << "\n";
  out << metrics_after.to_csv_row("after") << "\n";
  return out.str();
}

namespace {

metrics::MetricsReport metrics_from_row(const std::string& row) {
  const auto cells = split(row, ',');
  if (cells.size() != 9) fail(ErrorCode::ParseError, "bad metrics row: " + row);
  const auto opt = [](const std::string& c) -> std::optional<double> {
    if (c == "N/A") return std::nullopt;
    return std::stod(c);
  };
  metrics::MetricsReport m;
  m.mse = std::stod(cells[1]);
  m.rmse = std::stod(cells[2]);
  m.mae = std::stod(cells[3]);
  m.sharpness = opt(cells[4]);
  m.picp = opt(cells[5]);
  m.pinball = opt(cells[6]);
  m.sample_count = std::stoull(cells[7]);
  m.unit = cells[8];
  return m;
}

}  // namespace

ALCycleReport ALCycleReport::from_text(const std::string& text) {
  ALCycleReport r;
  std::istringstream in(text);
  std::string line;
  bool in_metrics = false;
  while (std::getline(in, line)) {
    if (line == "[metrics]") {
      in_metrics = true;
      continue;
    }
    if (in_metrics) {
      if (line.rfind("before,", 0) == 0) r.metrics_before = metrics_from_row(line);
      else if (line.rfind("after,", 0) == 0) r.metrics_after = metrics_from_row(line);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "cycle") r.cycle = std::stoi(value);
    else if (key == "theta") r.theta = std::stod(value);
    else if (key == "queried") r.queried = std::stoull(value);
    else if (key == "acquired") r.acquired = std::stoull(value);
    else if (key == "unavailable") r.unavailable = std::stoull(value);
    else if (key == "added_days") r.added_days = split(value, ';');
    else if (key == "flagged_days") r.flagged_days = split(value, ';');
    else if (key == "no_op") r.no_op = value == "true";
    else if (key == "note") r.note = value;
    else if (key == "parent_id") r.parent_id = value;
    else if (key == "child_id") r.child_id = value;
    else if (key == "wall_time_s") r.wall_time_s = std::stod(value);
  }
  if (!in_metrics) fail(ErrorCode::ParseError, "cycle report lacks its metrics block");
  return r;
}

std::vector<ForecastRecord> forecast_span(const TrainedModel& model, const DatasetBundle& bundle, const DaySpan& span,
                                          double level) {
  std::vector<WindowSample> windows;
  for (int day = span.first; day < span.last_exclusive; ++day) {
    try {
      windows.push_back(make_day_window(bundle, model.hp, model.layout, model.scaler, day));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientData) throw;
    }
  }
  return predict_many(model, windows, level);
}

CycleOutcome run_cycle(const CycleInputs& in) {
  if (!in.model || !in.repository || !in.bundle) fail(ErrorCode::StateError, "cycle inputs are incomplete");
  const auto now = [&] { return in.clock ? in.clock() : 0.0; };
  const double t0 = now();
  const TrainedModel& model = *in.model;
  const DatasetBundle& bundle = *in.bundle;
  const Timestamp origin = bundle.load.start;

  CycleOutcome out;
  out.forecasts = forecast_span(model, bundle, in.plan.pool, in.level);
  if (in.forecast_store) {
    for (const auto& f : out.forecasts) persist_forecast(*in.forecast_store, f);
  }

  std::set<Timestamp> training_days;
  for (int d = in.plan.train.first; d < in.plan.train.last_exclusive; ++d) training_days.insert(origin.plus_days(d));
  for (int d : in.existing_days) training_days.insert(origin.plus_days(d));
  const QuerySet queries = select_queries(out.forecasts, in.policy, training_days);
  const Acquisition acquisition = acquire_actuals(queries, *in.repository);

  const WindowSplits splits = make_windows(bundle, model.hp, in.plan, model.layout, model.scaler);
  if (splits.test.empty()) fail(ErrorCode::InsufficientData, "evaluation span holds no complete windows");

  ALCycleReport& report = out.report;
  report.cycle = in.cycle;
  report.theta = in.policy.theta;
  report.queried = queries.size();
  report.acquired = acquisition.labeled.size();
  report.unavailable = acquisition.unavailable.size();
  report.parent_id = model.id();
  report.metrics_before = evaluate_model(model, splits.test, in.level);

  std::set<int> excluded = in.existing_days;
  for (int d = in.plan.test.first; d < in.plan.test.last_exclusive; ++d) excluded.insert(d);
  std::vector<int> forced;
  for (int d : in.forced_days) {
    if (!excluded.contains(d)) forced.push_back(d);
  }

  const auto finish_no_op = [&](std::string note) {
    report.no_op = true;
    report.note = std::move(note);
    report.child_id = report.parent_id;
    report.metrics_after = report.metrics_before;
    report.wall_time_s = now() - t0;
    return out;
  };
  if (acquisition.labeled.empty() && forced.empty()) {
    return finish_no_op(queries.empty() ? "no forecast exceeded theta" : "no queried actuals available");
  }

  std::vector<WindowSample> base_train = splits.train;
  for (int d : in.existing_days) {
    WindowSample w = make_day_window(bundle, model.hp, model.layout, model.scaler, d);
    w.weight = kQueriedSampleWeight;
    base_train.push_back(std::move(w));
  }
  AugmentResult aug;
  try {
    aug = augment_and_retrain(model, base_train, splits.validation, acquisition.labeled, forced, excluded, bundle,
                              in.full_retrain, in.on_epoch);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NothingToLearn) throw;
    return finish_no_op(e.what());
  }

  for (int d : aug.added_days) report.added_days.push_back(format_date(origin.plus_days(d)));
  for (int d : forced) {
    if (std::ranges::find(aug.added_days, d) != aug.added_days.end()) {
      report.flagged_days.push_back(format_date(origin.plus_days(d)));
    }
  }
  report.child_id = aug.child.id();
  report.metrics_after = evaluate_model(aug.child, splits.test, in.level);
  out.added_days = aug.added_days;
  out.child = std::move(aug.child);
  report.wall_time_s = now() - t0;
  return out;
}

}  // namespace loadcast::al
