#include <benchmark/benchmark.h>

#include <random>

#include "loadcast/active_learning.hpp"
#include "loadcast/baselines.hpp"
#include "loadcast/forecaster.hpp"
#include "loadcast/network.hpp"

using namespace loadcast;

namespace {

Batch random_batch(const NetworkShape& shape, std::size_t rows, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto fill = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.values()) v = u(rng);
    return m;
  };
  Batch b;
  for (std::size_t s = 0; s < shape.history; ++s) b.encoder_steps.push_back(fill(rows, shape.encoder_features));
  for (std::size_t s = 0; s < shape.horizon; ++s) b.decoder_steps.push_back(fill(rows, shape.decoder_features));
  b.targets = fill(rows, shape.horizon);
  b.weights = Matrix(rows, shape.horizon, 1.0);
  b.loss_scale = Matrix::scalar(1.0 / static_cast<double>(rows * shape.horizon));
  return b;
}

// One minibatch step of the default-size network: forward plus backward.
void BM_EncoderDecoderStep(benchmark::State& state) {
  const NetworkShape shape{9, 7, static_cast<std::size_t>(state.range(0)), 168, 24};
  const NetworkParams params = init_params(shape, 1);
  EncoderDecoderGraph graph(shape, NetworkOptions{}, true);
  std::mt19937_64 rng(2);
  const Batch batch = random_batch(shape, 32, rng);
  graph.draw_masks(32, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(graph.tape().forward(graph.bind(params, batch)));
    graph.tape().backward();
  }
}
BENCHMARK(BM_EncoderDecoderStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Gnll(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  std::vector<double> mu(state.range(0)), var(state.range(0)), y(state.range(0));
  for (std::size_t i = 0; i < mu.size(); ++i) {
    mu[i] = u(rng);
    var[i] = u(rng);
    y[i] = u(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(gnll_loss(mu, var, y));
}
BENCHMARK(BM_Gnll)->Arg(24)->Arg(24 * 32);

void BM_SelectQueries(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> sigma(100.0, 500.0);
  std::vector<ForecastRecord> archive(static_cast<std::size_t>(state.range(0)));
  Timestamp t = parse_timestamp("2021-01-01T00:00:00Z");
  for (auto& r : archive) {
    r.issue_time = t;
    for (int h = 0; h < 24; ++h) r.steps.push_back({Timestamp{t.seconds + h * kSecondsPerHour}, 0, sigma(rng), 0, 0});
    t = t.plus_days(1);
  }
  al::ThresholdPolicy policy;
  policy.theta = 400.0;
  for (auto _ : state) benchmark::DoNotOptimize(al::select_queries(archive, policy));
}
BENCHMARK(BM_SelectQueries)->Arg(20)->Arg(365);

void BM_FitAr(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> eps(0.0, 1.0);
  std::vector<double> y(2400);
  for (std::size_t t = 1; t < y.size(); ++t) y[t] = 0.8 * y[t - 1] + eps(rng);
  const int order = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(baselines::fit_ar(y, order, 0, 1));
}
BENCHMARK(BM_FitAr)->Arg(3)->Arg(24);

}  // namespace

BENCHMARK_MAIN();
