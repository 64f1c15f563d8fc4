#include <algorithm>
#include <map>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "loadcast/active_learning.hpp"

using namespace loadcast;
using namespace loadcast::al;
using testing::code_of;

namespace {

const Timestamp kDay = parse_timestamp("2021-02-01T00:00:00Z");

ForecastRecord record(Timestamp start, std::vector<double> sigmas) {
  ForecastRecord r;
  r.issue_time = start;
  r.model_id = "m-test";
  for (std::size_t h = 0; h < sigmas.size(); ++h) {
    r.steps.push_back({Timestamp{start.seconds + static_cast<std::int64_t>(h) * kSecondsPerHour}, 0.0, sigmas[h],
                       -sigmas[h], sigmas[h]});
  }
  return r;
}

ThresholdPolicy policy_at(double theta) {
  ThresholdPolicy p;
  p.theta = theta;
  return p;
}

class FailingRepository : public SeriesRepository {
 public:
  TimeSeries query_range(const std::string&, Timestamp, Timestamp) const override { throw std::runtime_error("down"); }
  bool contains(const std::string&) const override { throw std::runtime_error("down"); }
  TimeSeries get(const std::string&) const override { throw std::runtime_error("down"); }
};

// A small scenario with a cheap model: 24 days, train 19 / pool 3 / test 2.
struct Scenario {
  DatasetBundle bundle;
  Hyperparams hp;
  SplitPlan plan;
  FeatureLayout layout;
  ScalerParams scaler;
  WindowSplits splits;
  TrainedModel model;
  Store store;
};

const Scenario& scenario() {
  static const Scenario* s = [] {
    auto* out = new Scenario;
    SyntheticConfig c;
    c.n_days = 24;
    c.rare_event_count = 1;
    out->bundle = generate_synthetic(c);
    out->hp.history_horizon = 48;
    out->hp.lstm_hidden = 8;
    out->hp.max_epochs = 4;
    out->hp.stride_hours = 12;
    out->hp.learning_rate = 1e-2;
    out->plan = SplitPlan::chronological(c.n_days, 3, 2);
    out->layout = feature_layout(out->bundle, out->hp);
    out->scaler = fit_scaler(out->bundle, out->layout, out->plan.train);
    out->splits = make_windows(out->bundle, out->hp, out->plan, out->layout, out->scaler);
    out->model = train(out->splits.train, out->splits.validation, out->hp, out->layout, out->scaler);
    out->store.put_bundle(out->bundle);
    return out;
  }();
  return *s;
}

CycleInputs inputs_for(const Scenario& s, double theta) {
  CycleInputs in;
  in.model = &s.model;
  in.repository = &s.store;
  in.bundle = &s.bundle;
  in.plan = s.plan;
  in.policy = policy_at(theta);
  return in;
}

}  // namespace

TEST_CASE("select_queries examples") {
  const std::vector<ForecastRecord> archive{record(kDay, {0.5, 1.2, 0.9})};
  const QuerySet q = select_queries(archive, policy_at(1.0));
  REQUIRE(q.size() == 1);
  CHECK(q.points[0].time == archive[0].steps[1].time);
  CHECK(q.points[0].sigma == 1.2);
  CHECK(q.theta_used == 1.0);
  CHECK(select_queries(archive, policy_at(1.3)).empty());
  CHECK(select_queries(archive, policy_at(1e-12)).size() == 3);
  CHECK(select_queries(archive, policy_at(1.2)).empty());
}

TEST_CASE("select_queries matches a brute-force filter") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> sig(0.0, 10.0);
  std::uniform_int_distribution<int> day(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ForecastRecord> archive;
    for (int k = 0; k < 6; ++k) {
      std::vector<double> s(24);
      for (double& v : s) v = sig(rng);
      // Repeated days exercise the max-sigma rule.
      archive.push_back(record(kDay.plus_days(day(rng)), s));
    }
    const std::set<Timestamp> training{kDay.plus_days(day(rng))};
    const double theta = sig(rng);

    std::map<Timestamp, double> best;
    for (const auto& r : archive) {
      for (const auto& st : r.steps) best[st.time] = std::max(best[st.time], st.sigma);
    }
    std::vector<QueryPoint> expected;
    for (const auto& [t, s] : best) {
      if (s > theta && !training.contains(floor_to_day(t))) expected.push_back({t, s});
    }
    const QuerySet q = select_queries(archive, policy_at(theta), training);
    CHECK(q.points == expected);

    // Raising theta can only shrink the set.
    const QuerySet higher = select_queries(archive, policy_at(theta + 1.0), training);
    for (const auto& p : higher.points) CHECK(std::ranges::find(q.points, p) != q.points.end());
  }
}

TEST_CASE("threshold updates keep an audit trail") {
  ThresholdPolicy p;
  CHECK(p.theta == 1000.0);
  CHECK_FALSE(p.set_by_operator);
  p = update_threshold(p, 800, "too many queries", "operator", kDay);
  CHECK(p.theta == 800);
  CHECK(p.history.size() == 1);
  CHECK(p.set_by_operator);
  p = update_threshold(p, 800, "again", "operator", kDay);
  CHECK(p.history.size() == 2);
  CHECK(code_of([&] { update_threshold(p, 0.0, "", "op", kDay); }) == ErrorCode::DomainError);
  CHECK(code_of([&] { update_threshold(p, -5.0, "", "op", kDay); }) == ErrorCode::DomainError);
  CHECK(p.history_csv().rfind("timestamp,theta,actor,rationale\n", 0) == 0);
  ThresholdPolicy q = update_threshold(p, 900, "a, \"quoted\" note", "op", kDay);
  CHECK(q.history_csv().find("\"a, \"\"quoted\"\" note\"") != std::string::npos);
}

TEST_CASE("acquire_actuals") {
  Store store;
  store.put(TimeSeries{"load", kDay, Duration{}, std::vector<double>(48, 0.0), "MW"});
  std::vector<double> values(48);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 100.0 + static_cast<double>(i);
  store.put(TimeSeries{"load", kDay, Duration{}, values, "MW"});

  QuerySet q;
  for (int h : {1, 5, 30}) q.points.push_back({Timestamp{kDay.seconds + h * kSecondsPerHour}, 2.0});
  const Acquisition a = acquire_actuals(q, store);
  REQUIRE(a.labeled.size() == 3);
  CHECK(a.labeled[1].actual == 105.0);
  CHECK(a.unavailable.empty());

  q.points.push_back({kDay.plus_days(5), 2.0});
  const Acquisition b = acquire_actuals(q, store);
  CHECK(b.labeled.size() == 3);
  CHECK(b.unavailable == std::vector{kDay.plus_days(5)});

  CHECK(acquire_actuals(QuerySet{}, store).no_op());
  CHECK(code_of([&] { acquire_actuals(q, FailingRepository{}); }) == ErrorCode::RepositoryError);
}

TEST_CASE("rare-event flags") {
  std::vector<Annotation> notes;
  const Timestamp end = kDay.plus_days(10);
  const FlagResult a = flag_rare_event(notes, kDay.plus_days(2), kDay.plus_days(4), "heat wave", "op", kDay, end);
  CHECK(a.annotation.id == "ev-0001");
  CHECK_FALSE(a.already_flagged);
  const FlagResult again = flag_rare_event(notes, kDay.plus_days(2), kDay.plus_days(4), "dup", "op", kDay, end);
  CHECK(again.already_flagged);
  CHECK(again.annotation.id == "ev-0001");
  CHECK(notes.size() == 1);
  CHECK(code_of([&] { flag_rare_event(notes, kDay.plus_days(9), kDay.plus_days(11), "", "op", kDay, end); }) ==
        ErrorCode::DomainError);
  CHECK(code_of([&] { flag_rare_event(notes, kDay.plus_days(3), kDay.plus_days(3), "", "op", kDay, end); }) ==
        ErrorCode::DomainError);
  CHECK(code_of([&] { flag_rare_event(notes, kDay.plus_days(-1), kDay.plus_days(1), "", "op", kDay, end); }) ==
        ErrorCode::DomainError);

  flag_rare_event(notes, Timestamp{kDay.plus_days(6).seconds + 3600}, Timestamp{kDay.plus_days(7).seconds + 3600},
                  "partial days", "op", kDay, end);
  CHECK(annotated_days(notes, kDay) == std::vector{2, 3, 6, 7});
}

TEST_CASE("cycle reports round-trip through text") {
  ALCycleReport r;
  r.cycle = 3;
  r.theta = 266.5;
  r.queried = 41;
  r.acquired = 40;
  r.unavailable = 1;
  r.added_days = {"2021-04-01", "2021-04-03"};
  r.flagged_days = {"2021-04-03"};
  r.note = "ok";
  r.metrics_before = metrics::evaluate_gaussian(std::vector{1.0, 2.0}, std::vector{1.1, 2.5}, std::vector{1.0, 1.0},
                                                0.95, "MW");
  r.metrics_after = metrics::evaluate_point(std::vector{1.0, 2.0}, std::vector{1.0, 2.1}, "MW");
  r.parent_id = "m-aaaaaaaaaaaaaaaa";
  r.child_id = "m-bbbbbbbbbbbbbbbb";
  r.wall_time_s = 12.5;
  const ALCycleReport back = ALCycleReport::from_text(r.to_text());
  CHECK(back.to_text() == r.to_text());
  CHECK(back.added_days == r.added_days);
  CHECK(back.metrics_before == r.metrics_before);
  CHECK_FALSE(back.metrics_after.picp.has_value());
}

TEST_CASE("augmentation adds one window per distinct day") {
  const Scenario& s = scenario();
  const int day = s.plan.pool.first;
  const Timestamp t0 = s.bundle.load.start.plus_days(day);
  std::vector<LabeledPoint> points;
  for (int h : {3, 3, 7, 20}) points.push_back({Timestamp{t0.seconds + h * kSecondsPerHour}, 1.0});
  const AugmentResult r = augment_and_retrain(s.model, s.splits.train, s.splits.validation, points, {}, {}, s.bundle);
  CHECK(r.added_days == std::vector{day});
  CHECK(r.child.provenance.parent_id == s.model.id());
  CHECK(r.child.provenance.training_samples == s.splits.train.size() + 1);
  CHECK(r.child.provenance.epochs_run <= std::max(1, s.hp.max_epochs / 2));

  const std::vector<int> forced{day + 1};
  const AugmentResult f =
      augment_and_retrain(s.model, s.splits.train, s.splits.validation, points, forced, {}, s.bundle);
  CHECK(f.added_days == std::vector{day, day + 1});

  const std::set<int> excluded{day};
  CHECK(code_of([&] {
          augment_and_retrain(s.model, s.splits.train, s.splits.validation, points, {}, excluded, s.bundle);
        }) == ErrorCode::NothingToLearn);
  // Too early for a full history.
  const std::vector<LabeledPoint> early{{s.bundle.load.start, 1.0}};
  CHECK(code_of([&] { augment_and_retrain(s.model, s.splits.train, s.splits.validation, early, {}, {}, s.bundle); }) ==
        ErrorCode::NothingToLearn);
}

TEST_CASE("a cycle with theta above every sigma is a no-op") {
  const Scenario& s = scenario();
  const CycleOutcome o = run_cycle(inputs_for(s, 1e9));
  CHECK(o.report.no_op);
  CHECK(o.report.queried == 0);
  CHECK_FALSE(o.child.has_value());
  CHECK(o.report.child_id == o.report.parent_id);
  CHECK(o.report.metrics_after == o.report.metrics_before);
  CHECK(o.forecasts.size() == static_cast<std::size_t>(s.plan.pool.days()));
}

TEST_CASE("queried count equals an independent scan of the pool forecasts") {
  const Scenario& s = scenario();
  std::vector<double> sigmas;
  for (const auto& f : forecast_span(s.model, s.bundle, s.plan.pool, 0.95)) {
    for (const auto& st : f.steps) sigmas.push_back(st.sigma);
  }
  std::ranges::sort(sigmas);
  const double theta = sigmas[sigmas.size() * 9 / 10];
  Store forecasts;
  CycleInputs in = inputs_for(s, theta);
  in.forecast_store = &forecasts;
  const CycleOutcome o = run_cycle(in);
  std::size_t expected = 0;
  for (double v : sigmas) expected += v > theta ? 1 : 0;
  CHECK(o.report.queried == expected);
  CHECK(o.report.acquired == expected);
  REQUIRE(o.child.has_value());
  CHECK(o.report.child_id == o.child->id());
  CHECK(o.report.metrics_before.sample_count == o.report.metrics_after.sample_count);
  CHECK(forecasts.list_documents("forecasts").size() == static_cast<std::size_t>(s.plan.pool.days()));

  SUBCASE("the next cycle descends from this one's child") {
    CycleInputs next = inputs_for(s, theta);
    next.model = &*o.child;
    next.cycle = 2;
    for (int d : o.added_days) next.existing_days.insert(d);
    const CycleOutcome o2 = run_cycle(next);
    CHECK(o2.report.parent_id == o.report.child_id);
    for (const auto& d : o2.report.added_days) CHECK(std::ranges::find(o.report.added_days, d) == o.report.added_days.end());
  }
}

TEST_CASE("operator-flagged days are learned even below theta") {
  const Scenario& s = scenario();
  CycleInputs in = inputs_for(s, 1e9);
  const int day = s.plan.pool.first + 1;
  in.forced_days = {day, s.plan.test.first};
  const CycleOutcome o = run_cycle(in);
  CHECK(o.report.queried == 0);
  CHECK_FALSE(o.report.no_op);
  // Test-span days never enter training.
  CHECK(o.added_days == std::vector{day});
  CHECK(o.report.flagged_days.size() == 1);
}

TEST_CASE("repository failure aborts the cycle") {
  const Scenario& s = scenario();
  const FailingRepository broken;
  CycleInputs in = inputs_for(s, 1.0);
  in.repository = &broken;
  CHECK(code_of([&] { run_cycle(in); }) == ErrorCode::RepositoryError);
}
