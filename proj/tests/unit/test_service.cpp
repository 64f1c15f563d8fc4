#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "httplib.h"
#include "json.hpp"
#include "golden_pipeline.hpp"
#include "loadcast/service.hpp"

using namespace loadcast;
using json = nlohmann::json;

namespace {

using golden::fixed_clock;
using golden::kSynth;

json data_of(const HttpResponse& r) { return json::parse(r.body).at("data"); }
std::string error_code(const HttpResponse& r) { return json::parse(r.body).at("error").at("code"); }

// Compares against tests/golden/<name>.json; UPDATE_GOLDEN=1 rewrites the file.
void check_golden(const std::string& name, const HttpResponse& r) {
  const std::filesystem::path path = std::filesystem::path(LOADCAST_GOLDEN_DIR) / (name + ".json");
  const char* update = std::getenv("UPDATE_GOLDEN");
  if (update && std::string(update) == "1") {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << r.body;
    return;
  }
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path << " (run with UPDATE_GOLDEN=1)");
  std::stringstream expected;
  expected << in.rdbuf();
  CAPTURE(name);
  CHECK(r.body == expected.str());
}

}  // namespace

TEST_CASE("responses carry a versioned envelope") {
  Engine e(fixed_clock());
  Service s(e);
  const HttpResponse health = s.handle("GET", "/api/v1/health");
  CHECK(health.status == 200);
  CHECK(health.body == R"({"api_version":"1","status":"ok","data":{"has_data":false,"active_model":null,"cycles":0}})"
                       "\n");
  const HttpResponse missing = s.handle("GET", "/api/v1/nowhere");
  CHECK(missing.status == 404);
  CHECK(json::parse(missing.body).at("status") == "error");
  CHECK(error_code(missing) == "not_found");
}

TEST_CASE("error codes map to HTTP statuses") {
  Engine e(fixed_clock());
  Service s(e);
  CHECK(s.handle("POST", "/api/v1/synth", {}, kSynth).status == 200);
  const HttpResponse no_model = s.handle("GET", "/api/v1/forecast", {{"date", "2021-01-29"}});
  CHECK(no_model.status == 409);
  CHECK(error_code(no_model) == "no_model");
  CHECK(s.handle("POST", "/api/v1/al/cycle").status == 409);

  const HttpResponse bad_json = s.handle("POST", "/api/v1/threshold", {}, "{not json");
  CHECK(bad_json.status == 400);
  CHECK(error_code(bad_json) == "parse_error");
  const HttpResponse negative = s.handle("POST", "/api/v1/threshold", {}, R"({"theta": -5})");
  CHECK(negative.status == 422);
  CHECK(error_code(negative) == "validation_error");
  CHECK(s.handle("POST", "/api/v1/threshold", {}, R"({"theta": "high"})").status == 422);
  CHECK(s.handle("GET", "/api/v1/jobs/job-9999").status == 404);
  CHECK(s.handle("GET", "/api/v1/cycles/3").status == 404);
  CHECK(s.handle("GET", "/api/v1/models/m-unknown").status == 404);
  CHECK(s.handle("GET", "/api/v1/flags", {{"from", "2021-01-10"}, {"to", "2021-01-05"}}).status == 422);
  CHECK(s.handle("POST", "/api/v1/events", {}, R"({"from": "2029-01-01T00:00:00Z", "to": "2029-01-02T00:00:00Z"})")
            .status == 422);
  CHECK(s.handle("POST", "/api/v1/train", {}, R"({"hyperparams": {"lstm_hidden": -1}})").status == 400);
}

TEST_CASE("idempotency keys replay POST responses") {
  Engine e(fixed_clock());
  Service s(e);
  const std::string body = R"({"theta": 800, "rationale": "fewer queries"})";
  const HttpResponse a = s.handle("POST", "/api/v1/threshold", {}, body, "key-1");
  const HttpResponse b = s.handle("POST", "/api/v1/threshold", {}, body, "key-1");
  CHECK(a.status == 200);
  CHECK(a.body == b.body);
  CHECK(e.threshold().history.size() == 1);
  const HttpResponse c = s.handle("POST", "/api/v1/threshold", {}, R"({"theta": 900})", "key-1");
  CHECK(c.status == 409);
  CHECK(error_code(c) == "conflict");
  s.handle("POST", "/api/v1/threshold", {}, body);
  CHECK(e.threshold().history.size() == 2);
}

TEST_CASE("a second job while one runs is refused") {
  Engine e(fixed_clock());
  Service s(e);
  s.handle("POST", "/api/v1/synth", {}, kSynth);
  const std::string slow =
      R"({"hyperparams": {"history_horizon": 48, "lstm_hidden": 16, "max_epochs": 40, "early_stop_patience": 40,
          "stride_hours": 3}, "pool_days": 4, "test_days": 3})";
  const HttpResponse first = s.handle("POST", "/api/v1/train", {}, slow);
  CHECK(first.status == 202);
  CHECK(data_of(first).at("state") == "queued");
  const HttpResponse second = s.handle("POST", "/api/v1/train", {}, slow);
  CHECK(second.status == 409);
  CHECK(error_code(second) == "busy");
  s.wait_for_jobs();
  const json job = data_of(s.handle("GET", "/api/v1/jobs/" + data_of(first).at("id").get<std::string>()));
  CHECK(job.at("state") == "done");
  CHECK(job.at("progress").at("epoch").get<int>() >= 1);
}

TEST_CASE("full pipeline payloads match the golden files") {
  Engine e(golden::fixed_clock());
  Service s(e);
  const golden::Call call = [&](const std::string& method, const std::string& path, const golden::Params& params,
                                const std::string& body) { return s.handle(method, path, params, body); };
  const golden::Result r = golden::run(call);
  CHECK(r.payloads.size() == 7);
  for (const auto& [name, response] : r.payloads) {
    CAPTURE(name);
    CHECK(response.status < 300);
    check_golden(name, response);
  }
  CHECK(data_of(r.payloads.at("forecast")).at("steps").size() == 24);
  CHECK(data_of(r.payloads.at("flags")).at("days").size() == 1);
  CHECK(r.payloads.at("events").status == 201);
  CHECK(data_of(r.payloads.at("cycle_report")).at("parent_id") == r.parent_model);
  CHECK(data_of(r.payloads.at("metrics_compare")).at("rows").size() == 2);

  CHECK(s.handle("GET", "/api/v1/forecast", {{"date", "2021-01-29"}, {"level", "1.5"}}).status == 422);
  const HttpResponse again = s.handle(
      "POST", "/api/v1/events", {}, R"({"from": "2021-01-24T00:00:00Z", "to": "2021-01-25T00:00:00Z"})");
  CHECK(again.status == 200);
  CHECK(data_of(again).at("already_flagged") == true);
  const json self = data_of(
      s.handle("GET", "/api/v1/metrics/compare", {{"before", r.parent_model}, {"after", r.parent_model}}));
  CHECK(self.at("rows")[0].at("mse") == self.at("rows")[1].at("mse"));
  const json models = data_of(s.handle("GET", "/api/v1/models"));
  CHECK(models.at("models").size() == 2);
  CHECK(models.at("active") == r.child_model);
  const json model = data_of(s.handle("GET", "/api/v1/models/" + r.child_model));
  CHECK(model.at("parent_id") == r.parent_model);
  const json bench = data_of(s.handle("GET", "/api/v1/bench", {{"models", "rnn,seasonal"}}));
  CHECK(bench.at("rows").size() == 2);
  CHECK(bench.at("rows")[1].at("model") == "seasonal");
}

TEST_CASE("the API is served over HTTP") {
  Engine e(fixed_clock());
  Service s(e);
  const int port = s.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/api/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Content-Type") == "application/json");
  const auto synth = client.Post("/api/v1/synth", kSynth, "application/json");
  REQUIRE(synth);
  CHECK(synth->status == 200);
  const auto flags = client.Get("/api/v1/flags?from=2021-01-02&to=2021-01-01");
  REQUIRE(flags);
  CHECK(flags->status == 422);
  s.stop();
}
