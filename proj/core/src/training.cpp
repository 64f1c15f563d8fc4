#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "loadcast/error.hpp"
#include "loadcast/forecaster.hpp"
#include "loadcast/log.hpp"
#include "loadcast/metrics.hpp"

namespace loadcast {

namespace {

constexpr double kDivergenceLimit = 1e6;
constexpr std::size_t kEvalChunk = 64;

NetworkShape shape_of(const Hyperparams& hp, const FeatureLayout& layout) {
  NetworkShape s;
  s.encoder_features = layout.encoder_features();
  s.decoder_features = layout.decoder_features();
  s.hidden = static_cast<std::size_t>(hp.lstm_hidden);
  s.history = static_cast<std::size_t>(hp.history_horizon);
  s.horizon = static_cast<std::size_t>(hp.forecast_horizon);
  return s;
}

NetworkOptions options_of(const Hyperparams& hp) {
  NetworkOptions o;
  o.lstm_dropout = hp.lstm_dropout;
  o.fc_dropout = hp.fc_dropout;
  o.leaky_relu_alpha = hp.leaky_relu_alpha;
  o.variance_floor = hp.variance_floor;
  return o;
}

struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  Adam(double learning_rate, const NetworkParams& params) : lr(learning_rate) {
    for (const auto& t : params.tensors) {
      m.emplace_back(t.rows(), t.cols());
      v.emplace_back(t.rows(), t.cols());
    }
  }

  void update(NetworkParams& params, const std::vector<const Matrix*>& grads, double grad_scale) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      Matrix& p = params.tensors[k];
      const Matrix& g = *grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] * grad_scale;
        m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * gi;
        v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * gi * gi;
        p[i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + eps);
      }
    }
  }
};

double batch_loss_scale(const Matrix& weights) {
  double total = 0.0;
  for (double w : weights.values()) total += w;
  return total > 0 ? 1.0 / total : 0.0;
}

std::vector<const WindowSample*> pointers(const std::vector<WindowSample>& samples, std::size_t lo, std::size_t hi) {
  std::vector<const WindowSample*> out;
  for (std::size_t i = lo; i < hi; ++i) out.push_back(&samples[i]);
  return out;
}

double evaluate_with_graph(EncoderDecoderGraph& graph, const NetworkParams& params,
                           const std::vector<WindowSample>& samples) {
  if (samples.empty()) return std::nan("");
  double weighted = 0.0;
  double total_weight = 0.0;
  for (std::size_t lo = 0; lo < samples.size(); lo += kEvalChunk) {
    const std::size_t hi = std::min(samples.size(), lo + kEvalChunk);
    const auto ptrs = pointers(samples, lo, hi);
    Batch batch = make_batch(ptrs, graph.shape().history, graph.shape().horizon);
    double w = 0.0;
    for (double v : batch.weights.values()) w += v;
    const double loss = graph.tape().forward(graph.bind(params, batch));
    weighted += loss * w;
    total_weight += w;
  }
  return weighted / total_weight;
}

}  // namespace

NetworkShape TrainedModel::shape() const { return shape_of(hp, layout); }

double gnll_loss(std::span<const double> mu, std::span<const double> sigma2, std::span<const double> y,
                 double variance_floor) {
  if (mu.size() != sigma2.size() || mu.size() != y.size()) fail(ErrorCode::ShapeError, "GNLL inputs differ in length");
  if (mu.empty()) fail(ErrorCode::ShapeError, "GNLL needs at least one step");
  double total = 0.0;
  for (std::size_t t = 0; t < mu.size(); ++t) {
    if (!(sigma2[t] >= variance_floor) || sigma2[t] <= 0.0) {
      fail(ErrorCode::VarianceError, "variance below the floor at step " + std::to_string(t));
    }
    const double r = y[t] - mu[t];
    total += 0.5 * std::log(2.0 * std::numbers::pi * sigma2[t]) + r * r / (2.0 * sigma2[t]);
  }
  return total / static_cast<double>(mu.size());
}

Batch make_batch(std::span<const WindowSample* const> samples, std::size_t history, std::size_t horizon) {
  if (samples.empty()) fail(ErrorCode::EmptyData, "empty batch");
  const std::size_t rows = samples.size();
  const std::size_t fe = samples.front()->encoder.cols();
  const std::size_t fd = samples.front()->decoder.cols();
  Batch b;
  b.encoder_steps.assign(history, Matrix(rows, fe));
  b.decoder_steps.assign(horizon, Matrix(rows, fd));
  b.targets.reset(rows, horizon);
  b.weights.reset(rows, horizon);
  for (std::size_t r = 0; r < rows; ++r) {
    const WindowSample& s = *samples[r];
    if (s.encoder.rows() != history || s.encoder.cols() != fe || s.decoder.rows() != horizon ||
        s.decoder.cols() != fd) {
      fail(ErrorCode::ShapeError, "window does not match the network layout");
    }
    for (std::size_t t = 0; t < history; ++t) {
      std::copy_n(s.encoder.data() + t * fe, fe, b.encoder_steps[t].data() + r * fe);
    }
    for (std::size_t t = 0; t < horizon; ++t) {
      std::copy_n(s.decoder.data() + t * fd, fd, b.decoder_steps[t].data() + r * fd);
      b.targets(r, t) = s.target.empty() ? 0.0 : s.target[t];
      b.weights(r, t) = s.weight;
    }
  }
  b.loss_scale = Matrix::scalar(batch_loss_scale(b.weights));
  return b;
}

double evaluate_gnll(const NetworkParams& params, const Hyperparams& hp, const FeatureLayout& layout,
                     const std::vector<WindowSample>& samples) {
  for (const auto& s : samples) {
    if (s.target.empty()) fail(ErrorCode::InsufficientData, "GNLL evaluation needs labelled windows");
  }
  EncoderDecoderGraph graph(shape_of(hp, layout), options_of(hp), false);
  return evaluate_with_graph(graph, params, samples);
}

double evaluate_gnll(const TrainedModel& model, const std::vector<WindowSample>& samples) {
  return evaluate_gnll(model.params, model.hp, model.layout, samples);
}

TrainedModel train(const std::vector<WindowSample>& train_samples,
                   const std::vector<WindowSample>& validation_samples, const Hyperparams& hp,
                   const FeatureLayout& layout, const ScalerParams& scaler, const TrainOptions& options) {
  hp.validate();
  if (train_samples.empty() || validation_samples.empty()) {
    fail(ErrorCode::EmptyData, "training needs non-empty train and validation sets");
  }
  for (const auto* set : {&train_samples, &validation_samples}) {
    for (const auto& s : *set) {
      if (s.target.size() != static_cast<std::size_t>(hp.forecast_horizon)) {
        fail(ErrorCode::InsufficientData, "training windows must be labelled");
      }
    }
  }
  const NetworkShape shape = shape_of(hp, layout);
  const NetworkOptions net_options = options_of(hp);
  const int max_epochs = options.epochs > 0 ? options.epochs : hp.max_epochs;

  TrainedModel model;
  model.hp = hp;
  model.layout = layout;
  model.scaler = scaler;
  model.params = options.initial ? *options.initial : init_params(shape, hp.seed);
  if (model.params.tensors.size() != kParameterCount) fail(ErrorCode::ShapeError, "bad initial parameters");

  EncoderDecoderGraph train_graph(shape, net_options, true);
  EncoderDecoderGraph eval_graph(shape, net_options, false);
  std::mt19937_64 rng(hp.seed ^ 0x9E3779B97F4A7C15ULL);
  Adam adam(hp.learning_rate, model.params);

  model.log.push_back({0, evaluate_with_graph(eval_graph, model.params, train_samples),
                       evaluate_with_graph(eval_graph, model.params, validation_samples)});
  NetworkParams best = model.params;
  // A warm start must return weights that have seen the new samples, so the
  // parent itself (epoch 0) is not a checkpoint candidate.
  double best_val = options.initial ? std::numeric_limits<double>::infinity() : model.log.back().validation_gnll;
  int best_epoch = 0;
  int since_best = 0;
  int epochs_run = 0;

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(hp.batch_size);
  std::vector<const Matrix*> grads(kParameterCount);

  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double weight_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
      const std::size_t hi = std::min(order.size(), lo + batch_size);
      std::vector<const WindowSample*> ptrs;
      for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&train_samples[order[i]]);
      const Batch batch = make_batch(ptrs, shape.history, shape.horizon);
      train_graph.draw_masks(batch.rows(), rng);
      autodiff::Tape& tape = train_graph.tape();
      const double loss = tape.forward(train_graph.bind(model.params, batch));
      if (!std::isfinite(loss) || loss > kDivergenceLimit) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << " (batch loss " << loss << ")";
        throw DivergenceError(epoch, msg.str());
      }
      tape.backward();
      double norm2 = 0.0;
      for (std::size_t k = 0; k < kParameterCount; ++k) {
        grads[k] = &tape.grad(train_graph.parameter(k));
        for (double g : grads[k]->values()) norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw DivergenceError(epoch, "non-finite gradient at epoch " + std::to_string(epoch));
      const double clip = hp.grad_clip_norm > 0 && norm > hp.grad_clip_norm ? hp.grad_clip_norm / norm : 1.0;
      adam.update(model.params, grads, clip);
      double w = 0.0;
      for (double v : batch.weights.values()) w += v;
      loss_sum += loss * w;
      weight_sum += w;
    }
    const double val = evaluate_with_graph(eval_graph, model.params, validation_samples);
    if (!std::isfinite(val)) throw DivergenceError(epoch, "validation loss became non-finite");
    model.log.push_back({epoch, loss_sum / weight_sum, val});
    epochs_run = epoch;
    if (options.on_epoch) options.on_epoch(epoch, max_epochs);
    if (val < best_val) {
      best_val = val;
      best = model.params;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= hp.early_stop_patience) {
      break;
    }
  }

  model.params = std::move(best);
  model.provenance.seed = hp.seed;
  model.provenance.parent_id = options.parent_id;
  model.provenance.epochs_run = epochs_run;
  model.provenance.best_epoch = best_epoch;
  model.provenance.training_samples = train_samples.size();
  model.provenance.validation_samples = validation_samples.size();
  model.provenance.dataset_start = format_timestamp(train_samples.front().target_start);
  Timestamp last = train_samples.front().target_start;
  for (const auto& s : train_samples) last = std::max(last, s.target_start);
  model.provenance.dataset_end = format_timestamp(last.plus_hours(hp.forecast_horizon));
  return model;
}

ScaledPrediction predict_scaled(const TrainedModel& model, const std::vector<WindowSample>& samples) {
  ScaledPrediction out;
  if (samples.empty()) return out;
  const NetworkShape shape = model.shape();
  EncoderDecoderGraph graph(shape, options_of(model.hp), false);
  for (std::size_t lo = 0; lo < samples.size(); lo += kEvalChunk) {
    const std::size_t hi = std::min(samples.size(), lo + kEvalChunk);
    const auto ptrs = pointers(samples, lo, hi);
    const Batch batch = make_batch(ptrs, shape.history, shape.horizon);
    graph.tape().forward(graph.bind(model.params, batch));
    const Matrix& mean = graph.mean();
    const Matrix& var = graph.variance();
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      out.mean.emplace_back(mean.data() + r * shape.horizon, mean.data() + (r + 1) * shape.horizon);
      out.variance.emplace_back(var.data() + r * shape.horizon, var.data() + (r + 1) * shape.horizon);
    }
  }
  return out;
}

double ForecastRecord::max_sigma() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.sigma);
  return m;
}

std::vector<std::pair<double, double>> prediction_interval(std::span<const double> mu, std::span<const double> sigma,
                                                           double level, double min_sigma) {
  if (mu.size() != sigma.size()) fail(ErrorCode::ShapeError, "mu and sigma differ in length");
  const double z = metrics::two_sided_z(level);
  std::vector<std::pair<double, double>> out;
  out.reserve(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = std::max(sigma[i], min_sigma);
    out.emplace_back(mu[i] - z * s, mu[i] + z * s);
  }
  return out;
}

ForecastRecord ForecastRecord::at_level(double new_level) const {
  std::vector<double> mu, sigma;
  for (const auto& s : steps) {
    mu.push_back(s.mu);
    sigma.push_back(s.sigma);
  }
  const auto bounds = prediction_interval(mu, sigma, new_level);
  ForecastRecord out = *this;
  out.level = new_level;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out.steps[i].lower = bounds[i].first;
    out.steps[i].upper = bounds[i].second;
  }
  return out;
}

double sigma_floor(const TrainedModel& model) {
  return std::sqrt(model.hp.variance_floor) * model.scaler.range(model.scaler.index_of("load"));
}

ForecastRecord predict_day_ahead(const TrainedModel& model, const WindowSample& window, double level) {
  const NetworkShape shape = model.shape();
  if (window.encoder.rows() != shape.history || window.decoder.rows() != shape.horizon) {
    fail(ErrorCode::InsufficientData, "context does not cover the history and forecast horizons");
  }
  for (const Matrix* m : {&window.encoder, &window.decoder}) {
    for (double v : m->values()) {
      if (!std::isfinite(v)) fail(ErrorCode::InsufficientData, "context contains gaps");
    }
  }
  std::size_t outside = 0;
  for (std::size_t r = 0; r < window.encoder.rows(); ++r) {
    for (std::size_t c = 0; c < model.layout.scaled.size(); ++c) {
      const double v = window.encoder(r, c);
      if (v < -1.0 || v > 2.0) ++outside;
    }
  }
  if (outside > 0) {
    log_message(LogLevel::Warning, "scale warning: " + std::to_string(outside) +
                                       " encoder inputs fall outside [-1, 2]; inputs may be unscaled");
  }

  return predict_many(model, {window}, level).front();
}

std::vector<ForecastRecord> predict_many(const TrainedModel& model, const std::vector<WindowSample>& windows,
                                         double level) {
  std::vector<ForecastRecord> out;
  if (windows.empty()) return out;
  const ScaledPrediction pred = predict_scaled(model, windows);
  const std::size_t load = model.scaler.index_of("load");
  const double range = model.scaler.range(load);
  const std::string id = model.id();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    std::vector<double> mu, sigma;
    for (std::size_t t = 0; t < pred.mean[i].size(); ++t) {
      mu.push_back(model.scaler.inverse(load, pred.mean[i][t]));
      sigma.push_back(std::sqrt(pred.variance[i][t]) * range);
    }
    const auto bounds = prediction_interval(mu, sigma, level);
    ForecastRecord record;
    record.issue_time = windows[i].target_start;
    record.model_id = id;
    record.level = level;
    for (std::size_t t = 0; t < mu.size(); ++t) {
      record.steps.push_back({windows[i].target_start.plus_hours(static_cast<std::int64_t>(t)), mu[t], sigma[t],
                              bounds[t].first, bounds[t].second});
    }
    out.push_back(std::move(record));
  }
  return out;
}

}  // namespace loadcast

namespace loadcast {

metrics::MetricsReport evaluate_model(const TrainedModel& model, const std::vector<WindowSample>& samples,
                                      double level) {
  if (samples.empty()) fail(ErrorCode::EmptyData, "no windows to evaluate");
  const ScaledPrediction pred = predict_scaled(model, samples);
  const std::size_t load = model.scaler.index_of("load");
  const double range = model.scaler.range(load);
  std::vector<double> actual, mu, sigma;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].target.empty()) fail(ErrorCode::InsufficientData, "evaluation windows must be labelled");
    for (std::size_t t = 0; t < samples[i].target.size(); ++t) {
      actual.push_back(model.scaler.inverse(load, samples[i].target[t]));
      mu.push_back(model.scaler.inverse(load, pred.mean[i][t]));
      sigma.push_back(std::sqrt(pred.variance[i][t]) * range);
    }
  }
  return metrics::evaluate_gaussian(actual, mu, sigma, level, "MW");
}

}  // namespace loadcast
