#include "loadcast/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "loadcast/baselines.hpp"
#include "loadcast/error.hpp"

namespace loadcast {

using json = nlohmann::ordered_json;

struct Engine::State {
  std::string active_model;
  std::vector<std::string> models;
  std::map<std::string, std::string> model_bytes;  // in-memory mode only
  std::optional<SplitPlan> plan;
  std::set<int> augmented;
  std::size_t base_training = 0;
  al::ThresholdPolicy policy;
  std::vector<al::Annotation> annotations;
  int cycles = 0;
  std::optional<DatasetBundle> bundle;
};

namespace {

json span_json(const DaySpan& s) { return json::array({s.first, s.last_exclusive}); }
DaySpan span_from(const json& j) { return DaySpan{j.at(0).get<int>(), j.at(1).get<int>()}; }

std::string cycle_key(int cycle) {
  char key[16];
  std::snprintf(key, sizeof key, "%04d", cycle);
  return key;
}

int day_of(const DatasetBundle& bundle, Timestamp t) {
  return static_cast<int>(std::floor(static_cast<double>(t.seconds - bundle.load.start.seconds) / kSecondsPerDay));
}

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::DomainError, "level must lie in (0, 1)");
}

}  // namespace

Engine::Engine(EngineOptions options) : options_(std::move(options)), state_(std::make_unique<State>()) {
  if (options_.data_dir.empty()) {
    store_ = std::make_unique<Store>();
  } else {
    std::filesystem::create_directories(options_.data_dir / "models");
    store_ = std::make_unique<Store>(options_.data_dir / "store");
    load_state();
  }
}

Engine::~Engine() = default;

Timestamp Engine::now() const {
  if (options_.now) return options_.now();
  const auto s = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch());
  return Timestamp{s.count()};
}

double Engine::wall() const {
  if (options_.wall_seconds) return options_.wall_seconds();
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::unique_lock<std::mutex> Engine::acquire_job() {
  std::unique_lock lock(job_mutex_, std::try_to_lock);
  if (!lock.owns_lock()) fail(ErrorCode::Busy, "another training or cycle job is running");
  return lock;
}

void Engine::save_state() const {
  if (options_.data_dir.empty()) return;
  const State& s = *state_;
  json j;
  j["active_model"] = s.active_model;
  j["models"] = s.models;
  if (s.plan) {
    j["plan"] = {{"train", span_json(s.plan->train)},
                 {"pool", span_json(s.plan->pool)},
                 {"test", span_json(s.plan->test)},
                 {"validation_fraction", s.plan->validation_fraction}};
  } else {
    j["plan"] = nullptr;
  }
  j["augmented_days"] = s.augmented;
  j["base_training"] = s.base_training;
  j["cycles"] = s.cycles;
  json history = json::array();
  for (const auto& h : s.policy.history) {
    history.push_back({{"at", format_timestamp(h.at)}, {"theta", h.theta}, {"rationale", h.rationale},
                       {"actor", h.actor}});
  }
  j["policy"] = {{"theta", s.policy.theta}, {"set_by_operator", s.policy.set_by_operator}, {"history", history}};
  json notes = json::array();
  for (const auto& a : s.annotations) {
    notes.push_back({{"id", a.id}, {"from", format_timestamp(a.from)}, {"to", format_timestamp(a.to)},
                     {"note", a.note}, {"actor", a.actor}});
  }
  j["annotations"] = notes;
  write_file_atomic(options_.data_dir / "state.json", j.dump(2) + "\n");
}

void Engine::load_state() {
  const auto path = options_.data_dir / "state.json";
  if (!std::filesystem::exists(path)) return;
  State& s = *state_;
  try {
    const json j = json::parse(read_file(path));
    s.active_model = j.at("active_model").get<std::string>();
    s.models = j.at("models").get<std::vector<std::string>>();
    if (!j.at("plan").is_null()) {
      const auto& p = j.at("plan");
      SplitPlan plan;
      plan.train = span_from(p.at("train"));
      plan.pool = span_from(p.at("pool"));
      plan.test = span_from(p.at("test"));
      plan.validation_fraction = p.at("validation_fraction").get<double>();
      s.plan = plan;
    }
    s.augmented = j.at("augmented_days").get<std::set<int>>();
    s.base_training = j.at("base_training").get<std::size_t>();
    s.cycles = j.at("cycles").get<int>();
    const auto& pol = j.at("policy");
    s.policy.theta = pol.at("theta").get<double>();
    s.policy.set_by_operator = pol.at("set_by_operator").get<bool>();
    for (const auto& h : pol.at("history")) {
      s.policy.history.push_back({parse_timestamp(h.at("at").get<std::string>()), h.at("theta").get<double>(),
                                  h.at("rationale").get<std::string>(), h.at("actor").get<std::string>()});
    }
    for (const auto& a : j.at("annotations")) {
      s.annotations.push_back({a.at("id").get<std::string>(), parse_timestamp(a.at("from").get<std::string>()),
                               parse_timestamp(a.at("to").get<std::string>()), a.at("note").get<std::string>(),
                               a.at("actor").get<std::string>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, "corrupt workspace state: " + std::string(e.what()));
  }
}

void Engine::store_model(const TrainedModel& model, const std::string& bytes) {
  const std::string id = model.id();
  if (options_.data_dir.empty()) {
    state_->model_bytes[id] = bytes;
  } else {
    write_file_atomic(options_.data_dir / "models" / (id + ".model"), bytes);
  }
  if (std::ranges::find(state_->models, id) == state_->models.end()) state_->models.push_back(id);
  model_cache_.insert_or_assign(id, model);
}

TrainedModel Engine::model_locked(const std::string& id) const {
  if (auto it = model_cache_.find(id); it != model_cache_.end()) return it->second;
  if (std::ranges::find(state_->models, id) == state_->models.end()) fail(ErrorCode::NotFound, "unknown model " + id);
  TrainedModel m;
  if (options_.data_dir.empty()) {
    m = deserialize_model(state_->model_bytes.at(id));
  } else {
    m = load_model(options_.data_dir / "models" / (id + ".model"));
  }
  model_cache_.emplace(id, m);
  return m;
}

DatasetBundle Engine::bundle_locked() const {
  if (!state_->bundle) {
    if (!store_->contains("load")) fail(ErrorCode::InsufficientData, "no load series stored");
    state_->bundle = store_->bundle();
  }
  return *state_->bundle;
}

DatasetBundle Engine::synthesize(const SyntheticConfig& config) {
  DatasetBundle bundle = generate_synthetic(config);
  auto job = acquire_job();
  std::lock_guard lock(mutex_);
  store_->put_bundle(bundle);
  State& s = *state_;
  s.bundle = bundle;
  s.active_model.clear();
  s.plan.reset();
  s.augmented.clear();
  s.base_training = 0;
  s.annotations.clear();
  save_state();
  return bundle;
}

IngestReport Engine::ingest(std::istream& csv, const CsvSchema& schema) {
  auto job = acquire_job();
  std::lock_guard lock(mutex_);
  IngestReport report = store_->ingest_csv(csv, schema);
  state_->bundle.reset();
  return report;
}

bool Engine::has_data() const { return store_->contains("load"); }

DatasetBundle Engine::bundle() const {
  std::lock_guard lock(mutex_);
  return bundle_locked();
}

std::vector<EventWindow> Engine::events() const { return bundle().events; }

TrainSummary Engine::train(const TrainRequest& request, const std::function<void(int, int)>& on_epoch) {
  request.hp.validate();
  auto job = acquire_job();
  DatasetBundle bundle;
  {
    std::lock_guard lock(mutex_);
    bundle = bundle_locked();
  }
  const double t0 = wall();
  const SplitPlan plan =
      SplitPlan::chronological(static_cast<int>(bundle.days()), request.pool_days, request.test_days);
  const FeatureLayout layout = feature_layout(bundle, request.hp);
  const ScalerParams scaler = fit_scaler(bundle, layout, plan.train);
  const WindowSplits splits = make_windows(bundle, request.hp, plan, layout, scaler);
  TrainOptions opts;
  opts.on_epoch = on_epoch;
  TrainedModel model = loadcast::train(splits.train, splits.validation, request.hp, layout, scaler, opts);

  TrainSummary summary;
  summary.model_id = model.id();
  summary.log = model.log;
  summary.best_epoch = model.provenance.best_epoch;
  summary.training_samples = splits.train.size();
  summary.validation_samples = splits.validation.size();
  if (!splits.test.empty()) {
    summary.test_gnll_initial =
        evaluate_gnll(init_params(model.shape(), request.hp.seed), request.hp, layout, splits.test);
    summary.test_gnll_final = evaluate_gnll(model, splits.test);
  }
  summary.wall_time_s = wall() - t0;

  std::lock_guard lock(mutex_);
  store_model(model, serialize_model(model));
  State& s = *state_;
  s.active_model = summary.model_id;
  s.plan = plan;
  s.augmented.clear();
  s.base_training = splits.train.size();
  save_state();
  return summary;
}

std::optional<std::string> Engine::active_model_id() const {
  std::lock_guard lock(mutex_);
  if (state_->active_model.empty()) return std::nullopt;
  return state_->active_model;
}

std::vector<std::string> Engine::model_ids() const {
  std::lock_guard lock(mutex_);
  return state_->models;
}

TrainedModel Engine::model(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return model_locked(id);
}

TrainedModel Engine::active_model() const {
  std::lock_guard lock(mutex_);
  if (state_->active_model.empty()) fail(ErrorCode::NoModel, "no model has been trained");
  return model_locked(state_->active_model);
}

std::optional<SplitPlan> Engine::split_plan() const {
  std::lock_guard lock(mutex_);
  return state_->plan;
}

ForecastRecord Engine::forecast(const std::string& date, double level) {
  check_level(level);
  const Timestamp day_start = floor_to_day(parse_timestamp(date));
  std::lock_guard lock(mutex_);
  if (state_->active_model.empty()) fail(ErrorCode::NoModel, "no model has been trained");
  const TrainedModel model = model_locked(state_->active_model);
  const std::string key_date = format_date(day_start);
  if (auto stored = load_forecast(*store_, state_->active_model, key_date)) return stored->at_level(level);
  const DatasetBundle bundle = bundle_locked();
  const int day = day_of(bundle, day_start);
  if (day < 0 || static_cast<std::size_t>(day) >= bundle.days()) {
    fail(ErrorCode::InsufficientData, "no stored inputs for " + key_date);
  }
  const WindowSample window = make_day_window(bundle, model.hp, model.layout, model.scaler, day);
  const ForecastRecord record = predict_day_ahead(model, window, 0.95);
  persist_forecast(*store_, record);
  return record.at_level(level);
}

std::vector<UncertaintyFlag> Engine::uncertainty_flags(const std::string& from, const std::string& to) const {
  const Timestamp first = floor_to_day(parse_timestamp(from));
  const Timestamp last = floor_to_day(parse_timestamp(to));
  if (last < first) fail(ErrorCode::DomainError, "date range is reversed");
  std::lock_guard lock(mutex_);
  const State& s = *state_;
  std::vector<UncertaintyFlag> out;
  for (Timestamp day = first; day <= last; day = day.plus_days(1)) {
    UncertaintyFlag flag;
    flag.date = format_date(day);
    flag.theta = s.policy.theta;
    if (!s.active_model.empty()) {
      if (auto f = load_forecast(*store_, s.active_model, flag.date)) {
        flag.max_sigma = f->max_sigma();
        flag.above_theta = *flag.max_sigma > s.policy.theta;
      }
    }
    for (const auto& a : s.annotations) {
      if (a.from < day.plus_days(1) && day < a.to) {
        flag.operator_flagged = true;
        flag.annotation_ids.push_back(a.id);
      }
    }
    if (flag.above_theta || flag.operator_flagged) out.push_back(std::move(flag));
  }
  return out;
}

al::ThresholdPolicy Engine::threshold() const {
  std::lock_guard lock(mutex_);
  return state_->policy;
}

al::ThresholdPolicy Engine::set_threshold(double theta, const std::string& rationale, const std::string& actor) {
  std::lock_guard lock(mutex_);
  state_->policy = al::update_threshold(state_->policy, theta, rationale, actor, now());
  save_state();
  return state_->policy;
}

al::FlagResult Engine::flag_event(Timestamp from, Timestamp to, const std::string& note, const std::string& actor) {
  std::lock_guard lock(mutex_);
  const DatasetBundle bundle = bundle_locked();
  const Timestamp data_end = std::min(bundle.load.end(), now());
  al::FlagResult result =
      al::flag_rare_event(state_->annotations, from, to, note, actor, bundle.load.start, data_end);
  if (!result.already_flagged) save_state();
  return result;
}

std::vector<al::Annotation> Engine::annotations() const {
  std::lock_guard lock(mutex_);
  return state_->annotations;
}

al::ALCycleReport Engine::run_cycle(const CycleRequest& request, const std::function<void(int, int)>& on_epoch) {
  check_level(request.level);
  auto job = acquire_job();
  TrainedModel model;
  DatasetBundle bundle;
  al::CycleInputs in;
  {
    std::lock_guard lock(mutex_);
    const State& s = *state_;
    if (s.active_model.empty() || !s.plan) fail(ErrorCode::NoModel, "no model has been trained");
    model = model_locked(s.active_model);
    bundle = bundle_locked();
    in.plan = *s.plan;
    in.policy = s.policy;
    in.existing_days = s.augmented;
    in.forced_days = al::annotated_days(s.annotations, bundle.load.start);
    in.cycle = s.cycles + 1;
  }
  in.model = &model;
  in.bundle = &bundle;
  in.repository = actuals_ ? actuals_.get() : store_.get();
  in.forecast_store = store_.get();
  in.level = request.level;
  in.full_retrain = request.full_retrain;
  in.on_epoch = on_epoch;
  in.clock = [this] { return wall(); };

  al::CycleOutcome outcome = al::run_cycle(in);

  std::lock_guard lock(mutex_);
  State& s = *state_;
  if (outcome.child) {
    store_model(*outcome.child, serialize_model(*outcome.child));
    s.active_model = outcome.report.child_id;
    s.augmented.insert(outcome.added_days.begin(), outcome.added_days.end());
  }
  s.cycles = outcome.report.cycle;
  store_->put_document("cycles", cycle_key(outcome.report.cycle), outcome.report.to_text());
  save_state();
  return outcome.report;
}

al::ALCycleReport Engine::cycle_report(int cycle) const {
  const auto text = store_->get_document("cycles", cycle_key(cycle));
  if (!text) fail(ErrorCode::NotFound, "no report for cycle " + std::to_string(cycle));
  return al::ALCycleReport::from_text(*text);
}

int Engine::cycle_count() const {
  std::lock_guard lock(mutex_);
  return state_->cycles;
}

std::size_t Engine::training_set_size() const {
  std::lock_guard lock(mutex_);
  return state_->base_training + state_->augmented.size();
}

std::set<int> Engine::augmented_days() const {
  std::lock_guard lock(mutex_);
  return state_->augmented;
}

void Engine::set_actuals_repository(std::shared_ptr<const SeriesRepository> repository) {
  std::lock_guard lock(mutex_);
  actuals_ = std::move(repository);
}

metrics::MetricsReport Engine::evaluate(const std::string& model_id, std::optional<DaySpan> span,
                                        double level) const {
  check_level(level);
  TrainedModel model;
  DatasetBundle bundle;
  SplitPlan plan;
  {
    std::lock_guard lock(mutex_);
    if (!state_->plan) fail(ErrorCode::NoModel, "no model has been trained");
    const std::string id = model_id.empty() ? state_->active_model : model_id;
    if (id.empty()) fail(ErrorCode::NoModel, "no model has been trained");
    model = model_locked(id);
    bundle = bundle_locked();
    plan = *state_->plan;
  }
  if (span) {
    if (span->first < 0 || span->last_exclusive > static_cast<int>(bundle.days()) || span->days() <= 0) {
      fail(ErrorCode::DomainError, "span lies outside the stored data");
    }
    plan = SplitPlan{DaySpan{}, DaySpan{}, *span, plan.validation_fraction};
  }
  const WindowSplits splits = make_windows(bundle, model.hp, plan, model.layout, model.scaler);
  if (splits.test.empty()) fail(ErrorCode::InsufficientData, "span holds no complete windows");
  return evaluate_model(model, splits.test, level);
}

MetricsComparison Engine::compare_models(const std::string& before_id, const std::string& after_id) const {
  MetricsComparison c;
  c.before_label = before_id;
  c.after_label = after_id;
  c.before_model = before_id;
  c.after_model = after_id;
  c.before = evaluate(before_id);
  c.after = before_id == after_id ? c.before : evaluate(after_id);
  return c;
}

MetricsComparison Engine::compare_cycle(int cycle) const {
  const al::ALCycleReport r = cycle_report(cycle);
  MetricsComparison c;
  c.before_label = "before";
  c.after_label = "after";
  c.before_model = r.parent_id;
  c.after_model = r.child_id;
  c.before = r.metrics_before;
  c.after = r.metrics_after;
  return c;
}

std::string MetricsComparison::to_csv() const {
  return metrics::MetricsReport::csv_header() + "\n" + before.to_csv_row(before_label) + "\n" +
         after.to_csv_row(after_label) + "\n";
}

std::vector<BenchRow> Engine::bench(const std::vector<std::string>& models, double level) const {
  check_level(level);
  TrainedModel model;
  bool have_model = false;
  DatasetBundle bundle;
  SplitPlan plan;
  {
    std::lock_guard lock(mutex_);
    bundle = bundle_locked();
    if (state_->plan) {
      plan = *state_->plan;
    } else {
      plan = SplitPlan::chronological(static_cast<int>(bundle.days()), 20, 20);
    }
    if (!state_->active_model.empty()) {
      model = model_locked(state_->active_model);
      have_model = true;
    }
  }
  const auto& load = bundle.load.values;
  const std::span<const double> train_series(load.data(), static_cast<std::size_t>(plan.train.last_exclusive) * 24);
  std::vector<double> actuals;
  for (int d = plan.test.first; d < plan.test.last_exclusive; ++d) {
    actuals.insert(actuals.end(), load.begin() + d * 24, load.begin() + (d + 1) * 24);
  }
  const auto point_forecasts = [&](const std::function<std::vector<double>(std::span<const double>)>& f) {
    std::vector<double> out;
    for (int d = plan.test.first; d < plan.test.last_exclusive; ++d) {
      const auto day = f(std::span<const double>(load.data(), static_cast<std::size_t>(d) * 24));
      out.insert(out.end(), day.begin(), day.end());
    }
    return out;
  };

  std::vector<BenchRow> rows;
  for (const auto& name : models) {
    if (name == "rnn") {
      if (!have_model) fail(ErrorCode::NoModel, "no model has been trained");
      std::vector<WindowSample> windows;
      for (int d = plan.test.first; d < plan.test.last_exclusive; ++d) {
        windows.push_back(make_day_window(bundle, model.hp, model.layout, model.scaler, d));
      }
      rows.push_back({name, evaluate_model(model, windows, level)});
    } else if (name == "seasonal") {
      const auto pred = point_forecasts([](auto h) { return baselines::seasonal_naive(h, 168, 24); });
      rows.push_back({name, metrics::evaluate_point(actuals, pred, bundle.load.unit)});
    } else if (name == "ar" || name == "sarima") {
      const baselines::ARModel ar =
          name == "ar" ? baselines::fit_ar(train_series, 24, 0, 1) : baselines::fit_ar(train_series, 3, 168, 0);
      const auto pred = point_forecasts([&](auto h) { return baselines::forecast_ar(ar, h, 24); });
      rows.push_back({name, metrics::evaluate_point(actuals, pred, bundle.load.unit)});
    } else {
      fail(ErrorCode::DomainError, "unknown benchmark model " + name);
    }
  }
  return rows;
}

std::vector<SweepRow> Engine::sweep(const std::vector<double>& thetas, bool retrain) {
  auto job = acquire_job();
  TrainedModel model;
  DatasetBundle bundle;
  al::CycleInputs in;
  {
    std::lock_guard lock(mutex_);
    const State& s = *state_;
    if (s.active_model.empty() || !s.plan) fail(ErrorCode::NoModel, "no model has been trained");
    model = model_locked(s.active_model);
    bundle = bundle_locked();
    in.plan = *s.plan;
    in.policy = s.policy;
    in.existing_days = s.augmented;
    in.forced_days = al::annotated_days(s.annotations, bundle.load.start);
    in.cycle = s.cycles + 1;
  }
  const auto forecasts = al::forecast_span(model, bundle, in.plan.pool, 0.95);
  std::set<Timestamp> excluded;
  for (int d = in.plan.train.first; d < in.plan.train.last_exclusive; ++d) {
    excluded.insert(bundle.load.start.plus_days(d));
  }
  for (int d : in.existing_days) excluded.insert(bundle.load.start.plus_days(d));

  std::vector<SweepRow> rows;
  for (double theta : thetas) {
    al::ThresholdPolicy policy;
    policy.theta = theta;
    if (!(theta > 0.0)) fail(ErrorCode::DomainError, "theta must be a positive number");
    const al::QuerySet q = al::select_queries(forecasts, policy, excluded);
    std::set<Timestamp> days;
    for (const auto& p : q.points) days.insert(floor_to_day(p.time));
    SweepRow row{theta, q.size(), days.size(), std::nullopt};
    if (retrain) {
      in.model = &model;
      in.bundle = &bundle;
      in.repository = store_.get();
      in.policy = policy;
      row.after = al::run_cycle(in).report.metrics_after;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace loadcast
