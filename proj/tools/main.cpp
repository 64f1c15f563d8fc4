// loadcast: command-line front end over the same engine the HTTP service uses.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "loadcast/engine.hpp"
#include "loadcast/error.hpp"
#include "loadcast/service.hpp"

using namespace loadcast;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::string num(double v) { return metrics::format_number(v); }

std::string opt(const std::optional<double>& v) { return v ? num(*v) : "N/A"; }

void print_metrics(const std::string& label, const metrics::MetricsReport& m, bool csv) {
  if (csv) {
    std::cout << metrics::MetricsReport::csv_header() << "\n" << m.to_csv_row(label) << "\n";
  } else {
    std::cout << m.to_key_value();
  }
}

void print_progress(int epoch, int max_epochs) {
  std::fprintf(stderr, "epoch %d/%d\n", epoch, max_epochs);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::optional<DaySpan> parse_span(const std::string& text, const DatasetBundle& bundle) {
  if (text.empty() || text == "test") return std::nullopt;
  const auto colon = text.find(':');
  if (colon == std::string::npos) fail(ErrorCode::DomainError, "span must be FROM:TO (dates) or 'test'");
  const auto day = [&](const std::string& d) {
    return static_cast<int>((floor_to_day(parse_timestamp(d)).seconds - bundle.load.start.seconds) / kSecondsPerDay);
  };
  return DaySpan{day(text.substr(0, colon)), day(text.substr(colon + 1)) + 1};
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Day-ahead probabilistic load forecasting with active learning"};
  app.require_subcommand(1);

  std::string data_dir = env_or("LOADCAST_DATA_DIR", "loadcast-data");
  bool csv = false;
  std::optional<std::uint64_t> seed_override;
  if (const char* s = std::getenv("LOADCAST_SEED"); s && *s) seed_override = std::stoull(s);
  app.add_option("--data-dir", data_dir, "Workspace directory (env LOADCAST_DATA_DIR)");
  app.add_flag("--csv", csv, "Emit CSV instead of key=value text");

  auto* ingest = app.add_subcommand("ingest", "Load series from a CSV file");
  std::string ingest_path, schema_map, ts_column = "timestamp";
  ingest->add_option("csv", ingest_path, "CSV file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--schema", schema_map, "column=series:unit,...")->required();
  ingest->add_option("--timestamp-column", ts_column);

  auto* synth = app.add_subcommand("synth", "Generate the synthetic scenario");
  SyntheticConfig sc;
  synth->add_option("--days", sc.n_days);
  synth->add_option("--seed", sc.seed);
  synth->add_option("--events", sc.rare_event_count, "Number of injected heat waves");
  synth->add_option("--noise-weekday", sc.noise_sigma_weekday);
  synth->add_option("--noise-weekend", sc.noise_sigma_weekend);

  auto* train = app.add_subcommand("train", "Train a forecaster on the stored data");
  std::string config_path;
  TrainRequest request;
  train->add_option("--config", config_path, "JSON file with hyperparameters")->check(CLI::ExistingFile);
  train->add_option("--pool-days", request.pool_days);
  train->add_option("--test-days", request.test_days);

  auto* forecast = app.add_subcommand("forecast", "Day-ahead forecast with prediction interval");
  std::string date;
  double level = 0.95;
  forecast->add_option("--date", date)->required();
  forecast->add_option("--level", level);

  auto* metrics_cmd = app.add_subcommand("metrics", "Score a model on a span, or compare a cycle");
  std::string model_id, span_text;
  int cycle_id = 0;
  metrics_cmd->add_option("--model", model_id, "Model id (default: active)");
  metrics_cmd->add_option("--span", span_text, "FROM:TO dates, default the test span");
  metrics_cmd->add_option("--cycle", cycle_id, "Before/after table of an AL cycle");

  auto* bench = app.add_subcommand("bench", "Compare forecasters on the test span");
  std::string bench_models = "rnn,seasonal,ar,sarima";
  bench->add_option("--models", bench_models);

  auto* al = app.add_subcommand("al", "Active learning");
  al->require_subcommand(1);
  auto* al_run = al->add_subcommand("run", "Run one uncertainty-sampling cycle");
  bool full_retrain = false;
  al_run->add_flag("--full-retrain", full_retrain, "Retrain from scratch instead of warm start");
  auto* al_theta = al->add_subcommand("theta", "Uncertainty threshold");
  al_theta->require_subcommand(1);
  auto* theta_set = al_theta->add_subcommand("set", "Set theta (MW)");
  double theta = 0.0;
  std::string why;
  theta_set->add_option("value", theta)->required();
  theta_set->add_option("--why", why)->required();
  auto* theta_show = al_theta->add_subcommand("show", "Current theta and its history");
  auto* al_sweep = al->add_subcommand("sweep", "Query counts for several thresholds");
  std::string thetas;
  bool sweep_retrain = false;
  al_sweep->add_option("--thetas", thetas)->required();
  al_sweep->add_flag("--retrain", sweep_retrain, "Also retrain per theta (nothing is installed)");

  auto* flag = app.add_subcommand("flag-event", "Annotate a rare-event window");
  std::string from, to, note;
  flag->add_option("--from", from)->required();
  flag->add_option("--to", to)->required();
  flag->add_option("--note", note);

  auto* flags = app.add_subcommand("flags", "Days whose forecast sigma exceeds theta");
  flags->add_option("--from", from)->required();
  flags->add_option("--to", to)->required();

  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  int port = std::stoi(env_or("LOADCAST_PORT", "8080"));
  std::string host = "127.0.0.1";
  serve->add_option("--port", port);
  serve->add_option("--host", host);

  CLI11_PARSE(app, argc, argv);

  try {
    Engine engine(EngineOptions{data_dir, {}, {}});

    if (*ingest) {
      CsvSchema schema = CsvSchema::parse_mapping(schema_map);
      schema.timestamp_column = ts_column;
      std::ifstream in(ingest_path);
      const IngestReport r = engine.ingest(in, schema);
      std::cout << "rows=" << r.row_count << "\n";
      for (const auto& [id, times] : r.interpolated) std::cout << "interpolated." << id << "=" << times.size() << "\n";
    } else if (*synth) {
      if (seed_override) sc.seed = *seed_override;
      const DatasetBundle b = engine.synthesize(sc);
      std::cout << "start=" << format_timestamp(b.load.start) << "\nend=" << format_timestamp(b.load.end())
                << "\nhours=" << b.hours() << "\n";
      for (const auto& e : b.events) {
        std::cout << "event=" << format_timestamp(e.from) << "/" << format_timestamp(e.to) << " " << e.kind << "\n";
      }
    } else if (*train) {
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        std::stringstream text;
        text << in.rdbuf();
        request.hp = hyperparams_from_json(text.str());
        const auto j = nlohmann::json::parse(text.str());
        request.pool_days = j.value("pool_days", request.pool_days);
        request.test_days = j.value("test_days", request.test_days);
      }
      if (seed_override) request.hp.seed = *seed_override;
      const TrainSummary s = engine.train(request, print_progress);
      if (csv) {
        std::cout << "epoch,train_gnll,validation_gnll\n";
        for (const auto& e : s.log) {
          std::cout << e.epoch << "," << num(e.train_gnll) << "," << num(e.validation_gnll) << "\n";
        }
      } else {
        std::cout << "model_id=" << s.model_id << "\nbest_epoch=" << s.best_epoch
                  << "\ntraining_samples=" << s.training_samples << "\nwall_time_s=" << num(s.wall_time_s) << "\n";
      }
    } else if (*forecast) {
      const ForecastRecord f = engine.forecast(date, level);
      if (!csv) std::cout << "# model_id=" << f.model_id << " level=" << num(f.level) << "\n";
      std::cout << "time,mu,sigma,lower,upper\n";
      for (const auto& s : f.steps) {
        std::cout << format_timestamp(s.time) << "," << num(s.mu) << "," << num(s.sigma) << "," << num(s.lower)
                  << "," << num(s.upper) << "\n";
      }
    } else if (*metrics_cmd) {
      if (cycle_id > 0) {
        const MetricsComparison c = engine.compare_cycle(cycle_id);
        std::cout << c.to_csv();
      } else {
        const auto span = parse_span(span_text, engine.bundle());
        print_metrics(model_id.empty() ? "active" : model_id, engine.evaluate(model_id, span), csv);
      }
    } else if (*bench) {
      std::vector<std::string> names;
      std::stringstream in(bench_models);
      for (std::string n; std::getline(in, n, ',');) names.push_back(n);
      std::cout << metrics::MetricsReport::csv_header() << "\n";
      for (const auto& row : engine.bench(names)) std::cout << row.metrics.to_csv_row(row.model) << "\n";
    } else if (*al_run) {
      CycleRequest cr;
      cr.full_retrain = full_retrain;
      const al::ALCycleReport r = engine.run_cycle(cr, print_progress);
      if (csv) {
        std::cout << engine.compare_cycle(r.cycle).to_csv();
      } else {
        std::cout << r.to_text();
      }
    } else if (*theta_set || *theta_show) {
      const al::ThresholdPolicy p = *theta_set ? engine.set_threshold(theta, why) : engine.threshold();
      if (csv) {
        std::cout << p.history_csv();
      } else {
        std::cout << "theta=" << num(p.theta) << "\nset_by=" << (p.set_by_operator ? "operator" : "default")
                  << "\nchanges=" << p.history.size() << "\n";
      }
    } else if (*al_sweep) {
      const auto rows = engine.sweep(parse_list(thetas), sweep_retrain);
      std::cout << "theta,queried,days,mse_after,sharpness_after,picp_after\n";
      for (const auto& r : rows) {
        std::cout << num(r.theta) << "," << r.queried << "," << r.days << ","
                  << (r.after ? num(r.after->mse) : "N/A") << "," << (r.after ? opt(r.after->sharpness) : "N/A")
                  << "," << (r.after ? opt(r.after->picp) : "N/A") << "\n";
      }
    } else if (*flag) {
      const al::FlagResult r = engine.flag_event(parse_timestamp(from), parse_timestamp(to), note);
      std::cout << "id=" << r.annotation.id << "\nalready_flagged=" << (r.already_flagged ? "true" : "false")
                << "\n";
    } else if (*flags) {
      std::cout << "date,max_sigma,theta,above_theta,operator_flagged\n";
      for (const auto& f : engine.uncertainty_flags(from, to)) {
        std::cout << f.date << "," << opt(f.max_sigma) << "," << num(f.theta) << "," << f.above_theta << ","
                  << f.operator_flagged << "\n";
      }
    } else if (*serve) {
      Service service(engine);
      const int bound = service.start(host, port);
      std::cerr << "listening on " << host << ":" << bound << "\n";
      std::signal(SIGINT, [](int) { g_stop = 1; });
      std::signal(SIGTERM, [](int) { g_stop = 1; });
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      service.stop();
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
