#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "loadcast/autodiff.hpp"
#include "loadcast/matrix.hpp"

namespace loadcast {

/// Sizes that fix the encoder-decoder graph.
struct NetworkShape {
  std::size_t encoder_features = 0;
  std::size_t decoder_features = 0;
  std::size_t hidden = 64;
  std::size_t history = 168;
  std::size_t horizon = 24;
};

struct NetworkOptions {
  double lstm_dropout = 0.3;
  double fc_dropout = 0.4;
  double leaky_relu_alpha = 0.1;
  double variance_floor = 1e-6;
};

/// Weights in a fixed order (see kParameterNames).
struct NetworkParams {
  std::vector<Matrix> tensors;

  bool operator==(const NetworkParams&) const = default;
};

inline constexpr const char* kParameterNames[] = {
    "encoder.w_input", "encoder.w_hidden", "encoder.bias",  "decoder.w_input", "decoder.w_hidden",
    "decoder.bias",    "fc.weight",        "fc.bias",       "head.weight",     "head.bias"};
inline constexpr std::size_t kParameterCount = std::size(kParameterNames);

/// Uniform in +-1/sqrt(fan_in); LSTM forget-gate bias starts at 1.
NetworkParams init_params(const NetworkShape& shape, std::uint64_t seed);

/// A minibatch laid out time-major for the graph.
struct Batch {
  std::vector<Matrix> encoder_steps;  // history x [B x F_enc]
  std::vector<Matrix> decoder_steps;  // horizon x [B x F_dec]
  Matrix targets;                     // [B x horizon]
  Matrix weights;                     // [B x horizon], per-sample weight repeated
  Matrix loss_scale;                  // 1x1, 1 / sum(weights)

  std::size_t rows() const { return targets.rows(); }
};

/// One LSTM encoder over the history, one LSTM decoder seeded with the final
/// encoder state and unrolled on exogenous decoder inputs, then a Leaky ReLU
/// fully connected layer and a two-unit head (mu, s) per step.
/// Variance is softplus(s) + variance_floor. The loss is the sample-weighted
/// mean Gaussian negative log likelihood.
class EncoderDecoderGraph {
 public:
  EncoderDecoderGraph(const NetworkShape& shape, const NetworkOptions& options, bool training);

  EncoderDecoderGraph(const EncoderDecoderGraph&) = delete;
  EncoderDecoderGraph& operator=(const EncoderDecoderGraph&) = delete;

  /// Draws fresh dropout masks for a batch of `rows` samples.
  void draw_masks(std::size_t rows, std::mt19937_64& rng);
  /// Binds parameters, batch data and the current masks.
  autodiff::Bindings bind(const NetworkParams& params, const Batch& batch);

  autodiff::Tape& tape() { return tape_; }
  const NetworkShape& shape() const { return shape_; }
  bool training() const { return training_; }

  /// [B x horizon] means and variances after forward().
  const Matrix& mean() const { return tape_.value(mean_); }
  const Matrix& variance() const { return tape_.value(variance_); }
  autodiff::Var parameter(std::size_t k) const { return params_[k]; }

 private:
  NetworkShape shape_;
  NetworkOptions options_;
  bool training_;
  autodiff::Tape tape_;
  std::vector<autodiff::Var> params_;
  std::vector<autodiff::Var> encoder_inputs_;
  std::vector<autodiff::Var> decoder_inputs_;
  std::vector<autodiff::Var> lstm_masks_;
  std::vector<autodiff::Var> fc_masks_;
  autodiff::Var h0_, c0_, targets_, weights_, loss_scale_;
  autodiff::Var mean_, variance_;
  std::vector<Matrix> lstm_mask_values_;
  std::vector<Matrix> fc_mask_values_;
  Matrix zeros_;
};

}  // namespace loadcast
