#include "loadcast/network.hpp"

#include <cmath>
#include <numbers>

#include "loadcast/error.hpp"

namespace loadcast {

using autodiff::Tape;
using autodiff::Var;

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

struct LstmState {
  Var h;
  Var c;
};

// Gate layout along the 4H columns: input, forget, candidate, output.
LstmState lstm_step(Tape& tape, Var x, LstmState prev, Var w_in, Var w_hidden, Var bias,
                    std::size_t hidden) {
  const Var z = tape.add(tape.add(tape.matmul(x, w_in), tape.matmul(prev.h, w_hidden)), bias);
  const Var i = tape.sigmoid(tape.slice_cols(z, 0, hidden));
  const Var f = tape.sigmoid(tape.slice_cols(z, hidden, 2 * hidden));
  const Var g = tape.tanh(tape.slice_cols(z, 2 * hidden, 3 * hidden));
  const Var o = tape.sigmoid(tape.slice_cols(z, 3 * hidden, 4 * hidden));
  const Var c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
  const Var h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

}  // namespace

NetworkParams init_params(const NetworkShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t h = shape.hidden;
  NetworkParams p;
  const auto lstm = [&](std::size_t features) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(features + h));
    p.tensors.push_back(uniform_matrix(features, 4 * h, bound, rng));
    p.tensors.push_back(uniform_matrix(h, 4 * h, bound, rng));
    Matrix bias = uniform_matrix(1, 4 * h, bound, rng);
    for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;
    p.tensors.push_back(std::move(bias));
  };
  lstm(shape.encoder_features);
  lstm(shape.decoder_features);
  const double fc_bound = 1.0 / std::sqrt(static_cast<double>(h));
  p.tensors.push_back(uniform_matrix(h, h, fc_bound, rng));
  p.tensors.push_back(uniform_matrix(1, h, fc_bound, rng));
  p.tensors.push_back(uniform_matrix(h, 2, fc_bound, rng));
  p.tensors.push_back(uniform_matrix(1, 2, fc_bound, rng));
  return p;
}

EncoderDecoderGraph::EncoderDecoderGraph(const NetworkShape& shape, const NetworkOptions& options,
                                         bool training)
    : shape_(shape), options_(options), training_(training) {
  if (shape.hidden == 0 || shape.history == 0 || shape.horizon == 0 || shape.encoder_features == 0 ||
      shape.decoder_features == 0) {
    fail(ErrorCode::ConfigError, "network dimensions must be positive");
  }
  Tape& t = tape_;
  for (const char* name : kParameterNames) params_.push_back(t.parameter(name));
  h0_ = t.input("h0");
  c0_ = t.input("c0");

  LstmState state{h0_, c0_};
  for (std::size_t s = 0; s < shape.history; ++s) {
    encoder_inputs_.push_back(t.input("enc" + std::to_string(s)));
    state = lstm_step(t, encoder_inputs_.back(), state, params_[0], params_[1], params_[2], shape.hidden);
  }

  std::vector<Var> means, raw_scales;
  for (std::size_t s = 0; s < shape.horizon; ++s) {
    decoder_inputs_.push_back(t.input("dec" + std::to_string(s)));
    state = lstm_step(t, decoder_inputs_.back(), state, params_[3], params_[4], params_[5], shape.hidden);
    Var features = state.h;
    if (training_) {
      lstm_masks_.push_back(t.input("lstm_mask" + std::to_string(s)));
      features = t.dropout(features, lstm_masks_.back(), options.lstm_dropout);
    }
    Var fc = t.leaky_relu(t.add(t.matmul(features, params_[6]), params_[7]), options.leaky_relu_alpha);
    if (training_) {
      fc_masks_.push_back(t.input("fc_mask" + std::to_string(s)));
      fc = t.dropout(fc, fc_masks_.back(), options.fc_dropout);
    }
    const Var head = t.add(t.matmul(fc, params_[8]), params_[9]);
    means.push_back(t.slice_cols(head, 0, 1));
    raw_scales.push_back(t.slice_cols(head, 1, 2));
  }
  mean_ = t.concat_cols(means);
  variance_ = t.add_const(t.softplus(t.concat_cols(raw_scales)), options.variance_floor);

  // 1/2 ln(2 pi var) + (y - mu)^2 / (2 var), weighted and averaged.
  targets_ = t.input("targets");
  weights_ = t.input("weights");
  loss_scale_ = t.input("loss_scale");
  const Var log_term = t.add_const(t.scale(t.log(variance_), 0.5), 0.5 * std::log(2.0 * std::numbers::pi));
  const Var resid = t.mul(t.scale(t.square(t.sub(targets_, mean_)), 0.5), t.reciprocal(variance_));
  const Var per_step = t.mul(t.add(log_term, resid), weights_);
  t.set_loss(t.mul(t.sum(per_step), loss_scale_));
}

void EncoderDecoderGraph::draw_masks(std::size_t rows, std::mt19937_64& rng) {
  if (!training_) return;
  const auto draw = [&](std::vector<Matrix>& masks, double p) {
    std::bernoulli_distribution keep(1.0 - p);
    masks.resize(shape_.horizon);
    for (Matrix& m : masks) {
      m.reset(rows, shape_.hidden);
      for (double& v : m.values()) v = keep(rng) ? 1.0 : 0.0;
    }
  };
  draw(lstm_mask_values_, options_.lstm_dropout);
  draw(fc_mask_values_, options_.fc_dropout);
}

autodiff::Bindings EncoderDecoderGraph::bind(const NetworkParams& params, const Batch& batch) {
  if (params.tensors.size() != kParameterCount) fail(ErrorCode::ShapeError, "parameter count mismatch");
  if (batch.encoder_steps.size() != shape_.history || batch.decoder_steps.size() != shape_.horizon) {
    fail(ErrorCode::ShapeError, "batch does not match the graph horizons");
  }
  autodiff::Bindings b;
  for (std::size_t k = 0; k < kParameterCount; ++k) b.bind(params_[k], params.tensors[k]);
  zeros_.reset(batch.rows(), shape_.hidden);
  b.bind(h0_, zeros_);
  b.bind(c0_, zeros_);
  for (std::size_t s = 0; s < shape_.history; ++s) b.bind(encoder_inputs_[s], batch.encoder_steps[s]);
  for (std::size_t s = 0; s < shape_.horizon; ++s) b.bind(decoder_inputs_[s], batch.decoder_steps[s]);
  if (training_) {
    if (lstm_mask_values_.size() != shape_.horizon || lstm_mask_values_.front().rows() != batch.rows()) {
      fail(ErrorCode::StateError, "dropout masks not drawn for this batch");
    }
    for (std::size_t s = 0; s < shape_.horizon; ++s) {
      b.bind(lstm_masks_[s], lstm_mask_values_[s]);
      b.bind(fc_masks_[s], fc_mask_values_[s]);
    }
  }
  b.bind(targets_, batch.targets);
  b.bind(weights_, batch.weights);
  b.bind(loss_scale_, batch.loss_scale);
  return b;
}

}  // namespace loadcast
