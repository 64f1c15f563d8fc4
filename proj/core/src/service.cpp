#include "loadcast/service.hpp"

#include <condition_variable>
#include <cstdio>
#include <functional>
#include <regex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "loadcast/error.hpp"

namespace loadcast {

using json = nlohmann::ordered_json;

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::NoModel:
    case ErrorCode::Busy:
    case ErrorCode::ConflictError:
    case ErrorCode::DuplicateTimestamp: return 409;
    case ErrorCode::ParseError:
    case ErrorCode::ConfigError: return 400;
    case ErrorCode::RepositoryError: return 503;
    case ErrorCode::DivergenceError:
    case ErrorCode::StateError:
    case ErrorCode::ShapeError:
    case ErrorCode::VersionError: return 500;
    default: return 422;
  }
}

HttpResponse envelope_ok(const json& data, int status = 200) {
  json j;
  j["api_version"] = kApiVersion;
  j["status"] = "ok";
  j["data"] = data;
  return {status, j.dump() + "\n"};
}

HttpResponse envelope_error(int status, std::string_view code, const std::string& message) {
  json j;
  j["api_version"] = kApiVersion;
  j["status"] = "error";
  j["error"] = {{"code", code}, {"message", message}};
  return {status, j.dump() + "\n"};
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json metrics_json(const metrics::MetricsReport& m) {
  return {{"mse", m.mse},
          {"rmse", m.rmse},
          {"mae", m.mae},
          {"sharpness", opt_json(m.sharpness)},
          {"picp", opt_json(m.picp)},
          {"pinball", opt_json(m.pinball)},
          {"sample_count", m.sample_count},
          {"unit", m.unit}};
}

json forecast_json(const ForecastRecord& f, double theta) {
  json steps = json::array();
  for (const auto& s : f.steps) {
    steps.push_back({{"time", format_timestamp(s.time)},
                     {"mu", s.mu},
                     {"sigma", s.sigma},
                     {"lower", s.lower},
                     {"upper", s.upper},
                     {"above_theta", s.sigma > theta}});
  }
  return {{"date", format_date(f.issue_time)},
          {"issue_time", format_timestamp(f.issue_time)},
          {"model_id", f.model_id},
          {"level", f.level},
          {"theta", theta},
          {"max_sigma", f.max_sigma()},
          {"flagged", f.max_sigma() > theta},
          {"steps", steps}};
}

json policy_json(const al::ThresholdPolicy& p) {
  json history = json::array();
  for (const auto& h : p.history) {
    history.push_back(
        {{"at", format_timestamp(h.at)}, {"theta", h.theta}, {"rationale", h.rationale}, {"actor", h.actor}});
  }
  return {{"theta", p.theta}, {"set_by", p.set_by_operator ? "operator" : "default"}, {"history", history}};
}

json annotation_json(const al::Annotation& a) {
  return {{"id", a.id},
          {"from", format_timestamp(a.from)},
          {"to", format_timestamp(a.to)},
          {"note", a.note},
          {"actor", a.actor}};
}

json report_json(const al::ALCycleReport& r) {
  return {{"cycle", r.cycle},
          {"theta", r.theta},
          {"queried", r.queried},
          {"acquired", r.acquired},
          {"unavailable", r.unavailable},
          {"added_days", r.added_days},
          {"flagged_days", r.flagged_days},
          {"no_op", r.no_op},
          {"note", r.note},
          {"parent_id", r.parent_id},
          {"child_id", r.child_id},
          {"wall_time_s", r.wall_time_s},
          {"metrics", {{"before", metrics_json(r.metrics_before)}, {"after", metrics_json(r.metrics_after)}}}};
}

json comparison_json(const MetricsComparison& c) {
  const auto row = [](const std::string& label, const std::string& model, const metrics::MetricsReport& m) {
    json j = {{"label", label}, {"model_id", model}};
    const json values = metrics_json(m);
    for (auto it = values.begin(); it != values.end(); ++it) j[it.key()] = it.value();
    return j;
  };
  return {{"rows", json::array({row(c.before_label, c.before_model, c.before),
                                row(c.after_label, c.after_model, c.after)})}};
}

json summary_json(const TrainSummary& s) {
  json log = json::array();
  for (const auto& e : s.log) {
    log.push_back({{"epoch", e.epoch}, {"train_gnll", e.train_gnll}, {"validation_gnll", e.validation_gnll}});
  }
  return {{"model_id", s.model_id},
          {"best_epoch", s.best_epoch},
          {"training_samples", s.training_samples},
          {"validation_samples", s.validation_samples},
          {"test_gnll_initial", opt_json(s.test_gnll_initial)},
          {"test_gnll_final", opt_json(s.test_gnll_final)},
          {"wall_time_s", s.wall_time_s},
          {"log", log}};
}

const std::string& param(const std::map<std::string, std::string>& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) fail(ErrorCode::DomainError, "missing query parameter '" + key + "'");
  return it->second;
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::DomainError, what + " is not a number: " + text);
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) fail(ErrorCode::ParseError, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, std::string("malformed JSON body: ") + e.what());
  }
}

SyntheticConfig synthetic_from(const json& j) {
  SyntheticConfig c;
  c.n_days = j.value("n_days", c.n_days);
  c.base_load = j.value("base_load", c.base_load);
  c.daily_amplitude = j.value("daily_amplitude", c.daily_amplitude);
  c.weekly_weekend_factor = j.value("weekly_weekend_factor", c.weekly_weekend_factor);
  c.temp_sensitivity = j.value("temp_sensitivity", c.temp_sensitivity);
  c.noise_sigma_weekday = j.value("noise_sigma_weekday", c.noise_sigma_weekday);
  c.noise_sigma_weekend = j.value("noise_sigma_weekend", c.noise_sigma_weekend);
  c.rare_event_count = j.value("rare_event_count", c.rare_event_count);
  c.seed = j.value("seed", c.seed);
  if (j.contains("start")) c.start = parse_timestamp(j.at("start").get<std::string>());
  return c;
}

json bundle_json(const DatasetBundle& b) {
  json events = json::array();
  for (const auto& e : b.events) {
    events.push_back({{"from", format_timestamp(e.from)}, {"to", format_timestamp(e.to)}, {"kind", e.kind}});
  }
  json covariates = json::array();
  for (const auto& [name, _] : b.covariates) covariates.push_back(name);
  return {{"start", format_timestamp(b.load.start)},
          {"end", format_timestamp(b.load.end())},
          {"hours", b.hours()},
          {"days", b.days()},
          {"covariates", covariates},
          {"events", events}};
}

struct Job {
  std::string id;
  std::string kind;
  std::string state = "queued";
  int epoch = 0;
  int max_epochs = 0;
  json result = nullptr;
  json error = nullptr;

  json to_json() const {
    return {{"id", id},
            {"kind", kind},
            {"state", state},
            {"progress", {{"epoch", epoch}, {"max_epochs", max_epochs}}},
            {"result", result},
            {"error", error}};
  }
};

}  // namespace

struct Service::Impl {
  explicit Impl(Engine& e) : engine(e) {}

  Engine& engine;

  std::mutex jobs_mutex;
  std::condition_variable jobs_idle;
  std::map<std::string, Job> jobs;
  int next_job = 1;
  bool job_active = false;
  std::thread worker;

  std::mutex idem_mutex;
  std::map<std::string, std::pair<std::string, HttpResponse>> idempotent;

  std::unique_ptr<httplib::Server> server;
  std::thread server_thread;

  json submit(const std::string& kind, std::function<json(const std::function<void(int, int)>&)> work) {
    std::unique_lock lock(jobs_mutex);
    if (job_active) fail(ErrorCode::Busy, "a job is already running");
    job_active = true;
    char id[24];
    std::snprintf(id, sizeof id, "job-%04d", next_job++);
    Job job;
    job.id = id;
    job.kind = kind;
    jobs[job.id] = job;
    const json snapshot = job.to_json();
    if (worker.joinable()) worker.join();
    worker = std::thread([this, job_id = job.id, work = std::move(work)] {
      {
        std::lock_guard l(jobs_mutex);
        jobs[job_id].state = "running";
      }
      const auto progress = [this, &job_id](int epoch, int max_epochs) {
        std::lock_guard l(jobs_mutex);
        jobs[job_id].epoch = epoch;
        jobs[job_id].max_epochs = max_epochs;
      };
      json result;
      json error = nullptr;
      try {
        result = work(progress);
      } catch (const Error& e) {
        error = {{"code", to_string(e.code())}, {"message", e.what()}};
      } catch (const std::exception& e) {
        error = {{"code", "internal"}, {"message", e.what()}};
      }
      std::lock_guard l(jobs_mutex);
      Job& j = jobs[job_id];
      if (error.is_null()) {
        j.state = "done";
        j.result = std::move(result);
      } else {
        j.state = "failed";
        j.error = std::move(error);
      }
      job_active = false;
      jobs_idle.notify_all();
    });
    return snapshot;
  }

  HttpResponse route(const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& params, const std::string& body) {
    static const std::regex job_re("^/api/v1/jobs/([A-Za-z0-9-]+)$");
    static const std::regex cycle_re("^/api/v1/cycles/([0-9]+)$");
    static const std::regex model_re("^/api/v1/models/([A-Za-z0-9-]+)$");
    std::smatch m;
    const bool get = method == "GET";
    const bool post = method == "POST";

    if (get && path == "/api/v1/health") {
      const auto active = engine.active_model_id();
      return envelope_ok({{"has_data", engine.has_data()},
                          {"active_model", active ? json(*active) : json(nullptr)},
                          {"cycles", engine.cycle_count()}});
    }
    if (post && path == "/api/v1/synth") {
      return envelope_ok(bundle_json(engine.synthesize(synthetic_from(parse_body(body)))));
    }
    if (post && path == "/api/v1/ingest") {
      const json j = parse_body(body);
      CsvSchema schema = CsvSchema::parse_mapping(j.at("schema").get<std::string>());
      if (j.contains("timestamp_column")) schema.timestamp_column = j.at("timestamp_column").get<std::string>();
      std::istringstream csv(j.at("csv").get<std::string>());
      const IngestReport r = engine.ingest(csv, schema);
      json interpolated = json::object();
      for (const auto& [id, times] : r.interpolated) {
        json list = json::array();
        for (auto t : times) list.push_back(format_timestamp(t));
        interpolated[id] = list;
      }
      return envelope_ok({{"series", r.series_ids}, {"rows", r.row_count}, {"interpolated", interpolated}});
    }
    if (post && path == "/api/v1/train") {
      const json j = parse_body(body);
      TrainRequest request;
      if (j.contains("hyperparams")) request.hp = hyperparams_from_json(j.at("hyperparams").dump());
      request.pool_days = j.value("pool_days", request.pool_days);
      request.test_days = j.value("test_days", request.test_days);
      request.hp.validate();
      if (!engine.has_data()) fail(ErrorCode::InsufficientData, "no load series stored");
      return envelope_ok(submit("train",
                                [this, request](const auto& progress) {
                                  return summary_json(engine.train(request, progress));
                                }),
                         202);
    }
    if (get && std::regex_match(path, m, job_re)) {
      std::lock_guard lock(jobs_mutex);
      auto it = jobs.find(m[1]);
      if (it == jobs.end()) fail(ErrorCode::NotFound, "unknown job " + m[1].str());
      return envelope_ok(it->second.to_json());
    }
    if (get && path == "/api/v1/forecast") {
      const double level = params.contains("level") ? parse_double(params.at("level"), "level") : 0.95;
      const ForecastRecord f = engine.forecast(param(params, "date"), level);
      return envelope_ok(forecast_json(f, engine.threshold().theta));
    }
    if (get && path == "/api/v1/flags") {
      json days = json::array();
      for (const auto& f : engine.uncertainty_flags(param(params, "from"), param(params, "to"))) {
        days.push_back({{"date", f.date},
                        {"max_sigma", opt_json(f.max_sigma)},
                        {"theta", f.theta},
                        {"above_theta", f.above_theta},
                        {"operator_flagged", f.operator_flagged},
                        {"annotation_ids", f.annotation_ids}});
      }
      return envelope_ok({{"days", days}});
    }
    if (path == "/api/v1/threshold") {
      if (get) return envelope_ok(policy_json(engine.threshold()));
      if (post) {
        const json j = parse_body(body);
        if (!j.contains("theta") || !j.at("theta").is_number()) {
          fail(ErrorCode::DomainError, "theta must be a number");
        }
        return envelope_ok(policy_json(engine.set_threshold(
            j.at("theta").get<double>(), j.value("rationale", std::string()), j.value("actor", std::string("operator")))));
      }
    }
    if (post && path == "/api/v1/al/cycle") {
      const json j = parse_body(body);
      CycleRequest request;
      request.level = j.value("level", request.level);
      request.full_retrain = j.value("full_retrain", request.full_retrain);
      if (!engine.active_model_id()) fail(ErrorCode::NoModel, "no model has been trained");
      return envelope_ok(submit("al_cycle",
                                [this, request](const auto& progress) {
                                  return report_json(engine.run_cycle(request, progress));
                                }),
                         202);
    }
    if (get && std::regex_match(path, m, cycle_re)) {
      return envelope_ok(report_json(engine.cycle_report(std::stoi(m[1]))));
    }
    if (get && path == "/api/v1/metrics/compare") {
      if (params.contains("cycle")) {
        return envelope_ok(comparison_json(engine.compare_cycle(static_cast<int>(parse_double(params.at("cycle"), "cycle")))));
      }
      return envelope_ok(comparison_json(engine.compare_models(param(params, "before"), param(params, "after"))));
    }
    if (path == "/api/v1/events") {
      if (post) {
        const json j = parse_body(body);
        const al::FlagResult r =
            engine.flag_event(parse_timestamp(j.at("from").get<std::string>()),
                              parse_timestamp(j.at("to").get<std::string>()), j.value("note", std::string()),
                              j.value("actor", std::string("operator")));
        json data = annotation_json(r.annotation);
        data["already_flagged"] = r.already_flagged;
        return envelope_ok(data, r.already_flagged ? 200 : 201);
      }
      if (get) {
        json list = json::array();
        for (const auto& a : engine.annotations()) list.push_back(annotation_json(a));
        return envelope_ok({{"annotations", list}});
      }
    }
    if (get && path == "/api/v1/models") {
      const auto active = engine.active_model_id();
      return envelope_ok({{"active", active ? json(*active) : json(nullptr)},
                          {"models", engine.model_ids()},
                          {"training_set_size", engine.training_set_size()},
                          {"augmented_days", engine.augmented_days().size()}});
    }
    if (get && std::regex_match(path, m, model_re)) {
      const TrainedModel model = engine.model(m[1]);
      json log = json::array();
      for (const auto& e : model.log) {
        log.push_back({{"epoch", e.epoch}, {"train_gnll", e.train_gnll}, {"validation_gnll", e.validation_gnll}});
      }
      return envelope_ok({{"id", m[1].str()},
                          {"parent_id", model.provenance.parent_id},
                          {"hyperparams", json::parse(hyperparams_to_json(model.hp))},
                          {"best_epoch", model.provenance.best_epoch},
                          {"training_samples", model.provenance.training_samples},
                          {"log", log}});
    }
    if (get && path == "/api/v1/bench") {
      std::vector<std::string> names;
      std::stringstream list(params.contains("models") ? params.at("models") : "rnn,seasonal,ar,sarima");
      for (std::string n; std::getline(list, n, ',');) names.push_back(n);
      json rows = json::array();
      for (const auto& row : engine.bench(names)) {
        json r = {{"model", row.model}};
        r.update(metrics_json(row.metrics));
        rows.push_back(r);
      }
      return envelope_ok({{"rows", rows}});
    }
    if (get && path == "/api/v1/metrics") {
      const std::string id = params.contains("model") ? params.at("model") : std::string();
      return envelope_ok(metrics_json(engine.evaluate(id)));
    }
    return envelope_error(404, "not_found", "no route for " + method + " " + path);
  }
};

Service::Service(Engine& engine) : impl_(std::make_unique<Impl>(engine)) {}

Service::~Service() {
  stop();
  wait_for_jobs();
  if (impl_->worker.joinable()) impl_->worker.join();
}

HttpResponse Service::handle(const std::string& method, const std::string& path,
                             const std::map<std::string, std::string>& params, const std::string& body,
                             const std::string& idempotency_key) {
  const bool keyed = method == "POST" && !idempotency_key.empty();
  if (keyed) {
    std::lock_guard lock(impl_->idem_mutex);
    auto it = impl_->idempotent.find(idempotency_key);
    if (it != impl_->idempotent.end()) {
      if (it->second.first != path + "\n" + body) {
        return envelope_error(409, "conflict", "idempotency key reused with a different request");
      }
      return it->second.second;
    }
  }
  HttpResponse response;
  try {
    response = impl_->route(method, path, params, body);
  } catch (const Error& e) {
    response = envelope_error(http_status(e.code()), to_string(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    response = envelope_error(400, "parse_error", e.what());
  } catch (const std::exception& e) {
    response = envelope_error(500, "internal", e.what());
  }
  if (keyed && response.status < 500) {
    std::lock_guard lock(impl_->idem_mutex);
    impl_->idempotent.emplace(idempotency_key, std::make_pair(path + "\n" + body, response));
  }
  return response;
}

int Service::start(const std::string& host, int port) {
  impl_->server = std::make_unique<httplib::Server>();
  const auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> params;
    for (const auto& [k, v] : req.params) params.emplace(k, v);
    const HttpResponse r = handle(req.method, req.path, params, req.body, req.get_header_value("Idempotency-Key"));
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  impl_->server->Get(".*", handler);
  impl_->server->Post(".*", handler);
  int bound = port;
  if (port == 0) {
    bound = impl_->server->bind_to_any_port(host);
  } else if (!impl_->server->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorCode::ConfigError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->server_thread = std::thread([this] { impl_->server->listen_after_bind(); });
  return bound;
}

void Service::wait() {
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

void Service::stop() {
  if (impl_->server) impl_->server->stop();
  wait();
}

void Service::wait_for_jobs() {
  std::unique_lock lock(impl_->jobs_mutex);
  impl_->jobs_idle.wait(lock, [this] { return !impl_->job_active; });
}

}  // namespace loadcast
