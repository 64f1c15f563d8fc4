// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. End-to-end criteria drive the service over HTTP only; the single
// exception is the fault-injection hook used by the atomicity check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "golden_pipeline.hpp"
#include "httplib.h"
#include "json.hpp"
#include "loadcast/active_learning.hpp"
#include "loadcast/engine.hpp"
#include "loadcast/forecaster.hpp"
#include "loadcast/metrics.hpp"
#include "loadcast/network.hpp"
#include "loadcast/service.hpp"

using namespace loadcast;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::ranges::sort(v);
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Configuration for the 120-day synthetic scenario. The network trains on
// six-hourly windows with a smaller hidden state than the default so that one
// seed finishes in about a minute on a single core.
// Dropout is lighter than the defaults: with 0.4 on the dense layer the
// variance head learns to cover training-time jitter in the mean and the
// intervals over-cover at inference.
const json kScenarioHyperparams = {{"lstm_hidden", 32},    {"stride_hours", 6},          {"learning_rate", 0.01},
                                   {"max_epochs", 60},     {"early_stop_patience", 20},  {"fc_dropout", 0.2},
                                   {"lstm_dropout", 0.1}};
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// ---------------------------------------------------------------- HTTP

class Api {
 public:
  explicit Api(int port) : client_("127.0.0.1", port) { client_.set_read_timeout(600, 0); }

  HttpResponse call(const std::string& method, const std::string& path, const golden::Params& params = {},
                    const std::string& body = {}) {
    std::string target = path;
    if (!params.empty()) {
      char sep = '?';
      for (const auto& [k, v] : params) {
        target += sep + k + "=" + httplib::detail::encode_query_param(v);
        sep = '&';
      }
    }
    const auto res = method == "GET" ? client_.Get(target) : client_.Post(target, body, "application/json");
    if (!res) throw std::runtime_error("HTTP request failed: " + method + " " + target);
    return HttpResponse{res->status, res->body};
  }

  json data(const std::string& method, const std::string& path, const golden::Params& params = {},
            const std::string& body = {}) {
    const HttpResponse r = call(method, path, params, body);
    if (r.status >= 300) throw std::runtime_error(method + " " + path + " -> " + std::to_string(r.status) + " " + r.body);
    return golden::data_of(r);
  }

  json job(const std::string& path, const std::string& body) {
    return golden::data_of(golden::finish_job(
        [this](const std::string& m, const std::string& p, const golden::Params& q, const std::string& b) {
          return call(m, p, q, b);
        },
        call("POST", path, {}, body)));
  }

  golden::Call as_call() {
    return [this](const std::string& m, const std::string& p, const golden::Params& q, const std::string& b) {
      return call(m, p, q, b);
    };
  }

 private:
  httplib::Client client_;
};

/// An engine, its service bound to a free port, and a client.
struct Server {
  Engine engine;
  Service service;
  int port;
  Api api;

  explicit Server(EngineOptions options = {})
      : engine(std::move(options)), service(engine), port(service.start("127.0.0.1", 0)), api(port) {}
  ~Server() { service.stop(); }
};

// ---------------------------------------------------------------- oracles

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  // The full encoder-decoder and GNLL head, at reduced width and length so
  // every parameter can be perturbed.
  const NetworkShape shape{9, 7, 6, 12, 6};
  double worst = 0.0;
  std::string where;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    const NetworkParams params = init_params(shape, 100 + draw);
    EncoderDecoderGraph graph(shape, NetworkOptions{}, true);
    std::mt19937_64 rng(200 + draw);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Batch batch;
    const auto fill = [&](std::size_t r, std::size_t c) {
      Matrix m(r, c);
      for (double& v : m.values()) v = u(rng);
      return m;
    };
    for (std::size_t s = 0; s < shape.history; ++s) batch.encoder_steps.push_back(fill(3, shape.encoder_features));
    for (std::size_t s = 0; s < shape.horizon; ++s) batch.decoder_steps.push_back(fill(3, shape.decoder_features));
    batch.targets = fill(3, shape.horizon);
    batch.weights = Matrix(3, shape.horizon, 1.0);
    batch.loss_scale = Matrix::scalar(1.0 / (3.0 * static_cast<double>(shape.horizon)));
    graph.draw_masks(3, rng);
    const autodiff::FiniteDiffReport r = autodiff::finite_diff_check(graph.tape(), graph.bind(params, batch), 1e-5);
    if (r.max_error > worst) {
      worst = r.max_error;
      where = r.worst_parameter;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, fmt("max_rel_err=%.3g (%s) draws=5 time=%.1fs", worst, where.c_str(), secs)};
}

Outcome gnll_oracle() {
  // Independent evaluation of mean_t [ln(2 pi sigma2_t)/2 + (y_t - mu_t)^2 / (2 sigma2_t)].
  const auto oracle = [](const std::vector<double>& mu, const std::vector<double>& s2, const std::vector<double>& y) {
    long double total = 0;
    for (std::size_t t = 0; t < mu.size(); ++t) {
      const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
      total += 0.5L * std::log(two_pi * s2[t]) + (y[t] - mu[t]) * (y[t] - mu[t]) / (2.0L * s2[t]);
    }
    return static_cast<double>(total / static_cast<long double>(mu.size()));
  };
  struct Case {
    std::vector<double> mu, s2, y;
  };
  const std::vector<Case> cases{{{0.0}, {1.0}, {0.0}}, {{0.0}, {1.0}, {1.0}}, {{2.0, -1.0}, {1.0, 0.25}, {2.0, -1.0}}};
  double worst = 0.0;
  std::string values;
  for (const auto& c : cases) {
    const double got = gnll_loss(c.mu, c.s2, c.y);
    worst = std::max(worst, std::abs(got - oracle(c.mu, c.s2, c.y)));
    values += fmt("%.9f ", got);
  }
  return {worst < 1e-9, fmt("values=[%s] max_abs_err=%.2g", values.c_str(), worst)};
}

Outcome interval_oracle() {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> n_dist(1, 10);
  std::uniform_int_distribution<int> grid(-20, 20);
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = n_dist(rng);
    std::vector<double> y;
    metrics::IntervalSet set;
    int covered = 0;
    double width = 0.0;
    for (int i = 0; i < n; ++i) {
      // Quarter-unit grid values make bound hits common and sums exact.
      double lo = grid(rng) / 4.0, hi = grid(rng) / 4.0;
      if (hi < lo) std::swap(lo, hi);
      const double yi = grid(rng) / 4.0;
      y.push_back(yi);
      set.intervals.push_back({lo, hi});
      covered += (lo <= yi && yi <= hi) ? 1 : 0;
      width += hi - lo;
    }
    exact = exact && metrics::picp(y, set) == 100.0 * covered / n && metrics::sharpness(set) == width / n;
  }
  std::mt19937_64 g(2024);
  std::uniform_real_distribution<double> mu_dist(-100, 100), sigma_dist(0.5, 30);
  const std::size_t n = 10000;
  std::vector<double> y(n), mu(n), sigma(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = mu_dist(g);
    sigma[i] = sigma_dist(g);
    y[i] = std::normal_distribution<double>(mu[i], sigma[i])(g);
  }
  const double coverage = *metrics::evaluate_gaussian(y, mu, sigma, 0.95, "MW").picp;
  return {exact && coverage >= 93.5 && coverage <= 96.5,
          fmt("brute_force_exact=%s instances=100 gaussian_picp=%.2f", exact ? "yes" : "no", coverage)};
}

Outcome query_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> sig(0.0, 600.0);
  std::uniform_int_distribution<int> day(0, 14), count(1, 12);
  const Timestamp d0 = parse_timestamp("2021-03-01T00:00:00Z");
  bool equal = true, nested = true;
  std::size_t total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ForecastRecord> archive(static_cast<std::size_t>(count(rng)));
    for (auto& r : archive) {
      r.issue_time = d0.plus_days(day(rng));
      for (int h = 0; h < 24; ++h) {
        r.steps.push_back({Timestamp{r.issue_time.seconds + h * kSecondsPerHour}, 0.0, sig(rng), 0.0, 0.0});
      }
    }
    std::set<Timestamp> training;
    for (int k = 0; k < 3; ++k) training.insert(d0.plus_days(day(rng)));
    std::vector<double> thetas{sig(rng), sig(rng), sig(rng)};
    std::ranges::sort(thetas);
    std::vector<al::QuerySet> sets;
    for (double theta : thetas) {
      al::ThresholdPolicy p;
      p.theta = theta;
      sets.push_back(al::select_queries(archive, p, training));
      std::map<Timestamp, double> best;
      for (const auto& r : archive) {
        for (const auto& s : r.steps) best[s.time] = std::max(best[s.time], s.sigma);
      }
      std::vector<al::QueryPoint> expected;
      for (const auto& [t, s] : best) {
        if (s > theta && !training.contains(floor_to_day(t))) expected.push_back({t, s});
      }
      equal = equal && sets.back().points == expected;
      total += expected.size();
    }
    for (std::size_t k = 1; k < sets.size(); ++k) {
      for (const auto& p : sets[k].points) nested = nested && std::ranges::find(sets[k - 1].points, p) != sets[k - 1].points.end();
    }
  }
  return {equal && nested, fmt("archives=100 set_equality=%s nesting=%s selected_total=%zu", equal ? "yes" : "no",
                               nested ? "yes" : "no", total)};
}

// ---------------------------------------------------------------- scenario

struct SeedRun {
  std::uint64_t seed = 0;
  double gnll_initial = 0, gnll_final = 0;
  double mae_rnn = 0, mae_seasonal = 0, picp = 0;
  double train_seconds = 0;
  bool al_ok = false;
  double mse_before = 0, mse_after = 0, sharp_before = 0, sharp_after = 0, picp_before = 0, picp_after = 0;
  double theta = 0, cycle_seconds = 0;
  std::size_t queried = 0;
  std::string error;
};

SeedRun run_seed(std::uint64_t seed) {
  SeedRun out;
  out.seed = seed;
  try {
    Server server;
    Api& api = server.api;
    const json bundle = api.data("POST", "/api/v1/synth", {}, json{{"seed", seed}}.dump());
    json hp = kScenarioHyperparams;
    hp["seed"] = seed;
    const auto t0 = Clock::now();
    const json train = api.job("/api/v1/train", json{{"hyperparams", hp}, {"pool_days", 20}, {"test_days", 20}}.dump());
    out.train_seconds = seconds_since(t0);
    if (train.at("state") != "done") throw std::runtime_error("training failed: " + train.dump());
    out.gnll_initial = train.at("result").at("test_gnll_initial");
    out.gnll_final = train.at("result").at("test_gnll_final");

    const json bench = api.data("GET", "/api/v1/bench", {{"models", "rnn,seasonal"}});
    out.mae_rnn = bench.at("rows")[0].at("mae");
    out.picp = bench.at("rows")[0].at("picp");
    out.mae_seasonal = bench.at("rows")[1].at("mae");

    // Theta at the 90th percentile of the pool-span sigma, set through the
    // operator endpoint.
    const Timestamp start = parse_timestamp(bundle.at("start").get<std::string>());
    std::vector<double> sigmas;
    for (int day = 80; day < 100; ++day) {
      const json f = api.data("GET", "/api/v1/forecast", {{"date", format_date(start.plus_days(day))}});
      for (const auto& s : f.at("steps")) sigmas.push_back(s.at("sigma"));
    }
    std::ranges::sort(sigmas);
    out.theta = sigmas[sigmas.size() * 9 / 10];
    api.data("POST", "/api/v1/threshold", {},
             json{{"theta", out.theta}, {"rationale", "90th percentile of pool sigma"}, {"actor", "acceptance"}}.dump());
    const json cycle = api.job("/api/v1/al/cycle", "{}");
    if (cycle.at("state") != "done") throw std::runtime_error("cycle failed: " + cycle.dump());
    const json& report = cycle.at("result");
    out.queried = report.at("queried");
    out.cycle_seconds = report.at("wall_time_s");
    const json& before = report.at("metrics").at("before");
    const json& after = report.at("metrics").at("after");
    out.mse_before = before.at("mse");
    out.mse_after = after.at("mse");
    out.sharp_before = before.at("sharpness");
    out.sharp_after = after.at("sharpness");
    out.picp_before = before.at("picp");
    out.picp_after = after.at("picp");
    out.al_ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  std::fprintf(stderr,
               "seed %llu: gnll %.3f -> %.3f, mae rnn %.1f seasonal %.1f, picp %.2f, train %.0fs | theta %.1f "
               "queried %zu mse %.0f -> %.0f sharp %.1f -> %.1f picp %.2f -> %.2f cycle %.0fs %s\n",
               static_cast<unsigned long long>(seed), out.gnll_initial, out.gnll_final, out.mae_rnn, out.mae_seasonal,
               out.picp, out.train_seconds, out.theta, out.queried, out.mse_before, out.mse_after, out.sharp_before,
               out.sharp_after, out.picp_before, out.picp_after, out.cycle_seconds, out.error.c_str());
  return out;
}

std::vector<double> collect(const std::vector<SeedRun>& runs, double SeedRun::*field) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.*field);
  return v;
}

Outcome learning(const std::vector<SeedRun>& runs) {
  for (const auto& r : runs) {
    if (!r.error.empty() && r.train_seconds == 0) return {false, "seed " + std::to_string(r.seed) + ": " + r.error};
  }
  std::vector<double> drop;
  for (const auto& r : runs) drop.push_back(r.gnll_initial - r.gnll_final);
  const double d = median(drop);
  const double mae = median(collect(runs, &SeedRun::mae_rnn));
  const double naive = median(collect(runs, &SeedRun::mae_seasonal));
  const double slowest = std::ranges::max(collect(runs, &SeedRun::train_seconds));
  return {d >= 1.0 && mae < naive && slowest < 300.0,
          fmt("median gnll_drop=%.3f nats, median test_mae=%.1f vs seasonal_naive=%.1f MW, max_train=%.0fs", d, mae,
              naive, slowest)};
}

Outcome calibration(const std::vector<SeedRun>& runs) {
  const double p = median(collect(runs, &SeedRun::picp));
  std::string each;
  for (const auto& r : runs) each += fmt("%.2f ", r.picp);
  return {p >= 90.0 && p <= 99.0, fmt("median picp=%.2f (seeds: %s) target [90, 99]", p, each.c_str())};
}

Outcome al_direction(const std::vector<SeedRun>& runs) {
  std::vector<double> d_mse, d_sharp, d_picp;
  for (const auto& r : runs) {
    if (!r.al_ok) return {false, "seed " + std::to_string(r.seed) + ": " + r.error};
    d_mse.push_back(r.mse_after - r.mse_before);
    d_sharp.push_back(r.sharp_after - r.sharp_before);
    d_picp.push_back(r.picp_after - r.picp_before);
  }
  const double m = median(d_mse), s = median(d_sharp), p = median(d_picp);
  const double slowest = std::ranges::max(collect(runs, &SeedRun::cycle_seconds));
  return {m <= 0.0 && s <= 0.0 && p >= -1.0 && slowest < 180.0,
          fmt("median delta mse=%.1f sharpness=%.2f picp=%.2fpp, max_cycle=%.0fs", m, s, p, slowest)};
}

// ---------------------------------------------------------------- state

const json kSmallTrain = {{"hyperparams",
                           {{"history_horizon", 48}, {"lstm_hidden", 8}, {"max_epochs", 4}, {"stride_hours", 12},
                            {"learning_rate", 0.01}}},
                          {"pool_days", 4},
                          {"test_days", 3}};

class FailingRepository : public SeriesRepository {
 public:
  TimeSeries query_range(const std::string&, Timestamp, Timestamp) const override { throw std::runtime_error("down"); }
  bool contains(const std::string&) const override { throw std::runtime_error("down"); }
  TimeSeries get(const std::string&) const override { throw std::runtime_error("down"); }
};

Outcome atomicity() {
  Server server;
  Api& api = server.api;
  api.data("POST", "/api/v1/synth", {}, R"({"n_days": 30, "seed": 3})");
  if (api.job("/api/v1/train", kSmallTrain.dump()).at("state") != "done") return {false, "training failed"};
  api.data("POST", "/api/v1/threshold", {}, R"({"theta": 1.0, "rationale": "query every step"})");
  const json models_before = api.data("GET", "/api/v1/models");
  const json theta_before = api.data("GET", "/api/v1/threshold");
  server.engine.set_actuals_repository(std::make_shared<FailingRepository>());
  const json job = api.job("/api/v1/al/cycle", "{}");
  const json models_after = api.data("GET", "/api/v1/models");
  const json theta_after = api.data("GET", "/api/v1/threshold");
  const bool failed = job.at("state") == "failed" && job.at("error").at("code") == "repository_error";
  const bool same = models_before == models_after && theta_before == theta_after;
  return {failed && same,
          fmt("cycle_state=%s error=%s active_model_unchanged=%s training_set_size=%zu->%zu theta_history=%zu->%zu",
              job.at("state").get<std::string>().c_str(),
              job.at("error").is_null() ? "none" : job.at("error").at("code").get<std::string>().c_str(),
              models_before.at("active") == models_after.at("active") ? "yes" : "no",
              models_before.at("training_set_size").get<std::size_t>(),
              models_after.at("training_set_size").get<std::size_t>(), theta_before.at("history").size(),
              theta_after.at("history").size())};
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / "loadcast_acceptance_determinism";
  std::filesystem::remove_all(root);
  struct Run {
    std::string model_id, model_bytes, forecast;
  };
  const auto run = [&](const std::string& name) {
    EngineOptions options;
    options.data_dir = root / name;
    Server server(options);
    server.api.data("POST", "/api/v1/synth", {}, R"({"n_days": 30, "seed": 11})");
    const json job = server.api.job("/api/v1/train", kSmallTrain.dump());
    Run r;
    r.model_id = job.at("result").at("model_id");
    r.model_bytes = read_bytes(options.data_dir / "models" / (r.model_id + ".model"));
    r.forecast = server.api.call("GET", "/api/v1/forecast", {{"date", "2021-01-29"}}).body;
    return r;
  };
  const Run a = run("a"), b = run("b");
  std::filesystem::remove_all(root);
  const bool model_same = !a.model_bytes.empty() && a.model_bytes == b.model_bytes;
  const bool forecast_same = a.forecast == b.forecast;
  return {model_same && forecast_same,
          fmt("model_file_identical=%s (%zu bytes) forecast_identical=%s model=%s", model_same ? "yes" : "no",
              a.model_bytes.size(), forecast_same ? "yes" : "no", a.model_id.c_str())};
}

Outcome service_contract() {
  Server server(golden::fixed_clock());
  Api& api = server.api;
  std::vector<std::string> failures;
  const auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const golden::Result r = golden::run(api.as_call());
  for (const auto& [name, response] : r.payloads) {
    const std::string expected = read_bytes(std::filesystem::path(LOADCAST_GOLDEN_DIR) / (name + ".json"));
    check(response.body == expected, "golden " + name);
  }
  // The remaining routes, over the same socket.
  check(api.call("GET", "/api/v1/health").status == 200, "health");
  check(api.data("GET", "/api/v1/models").at("models").size() == 2, "models");
  check(api.call("GET", "/api/v1/models/" + r.child_model).status == 200, "model detail");
  check(api.call("GET", "/api/v1/metrics", {{"model", r.parent_model}}).status == 200, "metrics");
  check(api.call("GET", "/api/v1/events").status == 200, "events list");
  check(api.call("GET", "/api/v1/threshold").status == 200, "threshold get");
  check(api.call("GET", "/api/v1/cycles/9").status == 404, "unknown cycle");
  check(api.call("GET", "/api/v1/forecast", {{"date", "2021-01-29"}, {"level", "1.5"}}).status == 422, "bad level");
  check(api.call("POST", "/api/v1/threshold", {}, R"({"theta": -5})").status == 422, "negative theta");
  const HttpResponse ingest = api.call(
      "POST", "/api/v1/ingest", {},
      json{{"csv", "timestamp,demand\n2021-03-01T00:00:00Z,100\n2021-03-01T01:00:00Z,110\n"},
           {"schema", "demand=extra:MW"}}
          .dump());
  check(ingest.status == 200 && golden::data_of(ingest).at("rows") == 2, "ingest");
  std::string failed;
  for (const auto& f : failures) failed += f + "; ";
  return {failures.empty(), fmt("goldens=%zu routes_checked=10 failures=[%s]", r.payloads.size(), failed.c_str())};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report("gradient_correctness", gradient_correctness);
  report("gnll_oracle", gnll_oracle);
  report("interval_oracle", interval_oracle);
  report("query_oracle", query_oracle);

  std::vector<SeedRun> runs;
  for (std::uint64_t seed : kSeeds) runs.push_back(run_seed(seed));
  report("learning", [&] { return learning(runs); });
  report("calibration", [&] { return calibration(runs); });
  report("al_direction", [&] { return al_direction(runs); });

  report("atomicity", atomicity);
  report("determinism", determinism);
  report("service_contract", service_contract);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
