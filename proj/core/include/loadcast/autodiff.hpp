#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "loadcast/matrix.hpp"

// Reverse-mode gradient engine over dense float64 matrices.
//
// A Tape records a static graph once; inputs and parameters are placeholders
// bound to caller-owned matrices at each forward(). Shapes are resolved at
// forward time, so one graph serves any batch size.
//
// Broadcasting: binary elementwise ops accept an operand that is either the
// same shape as the result, a 1xC row (broadcast over rows) or a 1x1 scalar.

namespace loadcast::autodiff {

enum class Op {
  Input,
  Parameter,
  Add,
  Sub,
  Mul,
  MatMul,
  Sigmoid,
  Tanh,
  LeakyRelu,
  Softplus,
  Log,
  Square,
  Reciprocal,
  Scale,
  AddConst,
  Slice,
  Concat,
  Dropout,
  Sum,
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
  bool operator==(const Var&) const = default;
};

/// Non-owning map from input/parameter placeholders to values.
class Bindings {
 public:
  void bind(Var v, const Matrix& value);
  const Matrix* find(Var v) const;

 private:
  std::vector<const Matrix*> slots_;
};

class Tape {
 public:
  Var input(std::string name);
  Var parameter(std::string name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var leaky_relu(Var x, double alpha);
  Var softplus(Var x);
  Var log(Var x);
  Var square(Var x);
  Var reciprocal(Var x);
  Var scale(Var x, double factor);
  Var add_const(Var x, double c);
  /// Columns [lo, hi).
  Var slice_cols(Var x, std::size_t lo, std::size_t hi);
  Var concat_cols(std::span<const Var> parts);
  /// Inverted dropout: x * mask / (1 - p), mask a same-shape 0/1 input.
  Var dropout(Var x, Var mask, double p);
  /// Sum of all elements, 1x1.
  Var sum(Var x);

  void set_loss(Var loss) { loss_ = loss; }
  Var loss() const { return loss_; }

  /// Evaluates every node in recording order and returns the loss value.
  /// Throws StateError for unbound placeholders, ShapeError on mismatch.
  double forward(const Bindings& bindings);
  /// Fills grad() for every node on a path from a parameter to the loss.
  /// Throws StateError if forward() has not run.
  void backward();

  const Matrix& value(Var v) const;
  /// Gradient of the loss; exact zero for parameters off every path to it.
  const Matrix& grad(Var v) const;

  const std::vector<Var>& parameters() const { return parameters_; }
  const std::string& name(Var v) const;
  Op op(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Input;
    std::vector<int> inputs;
    double alpha = 0.0;
    std::size_t lo = 0;
    std::size_t hi = 0;
    std::string name;
    bool requires_grad = false;
    const Matrix* bound = nullptr;
    Matrix value;
    Matrix grad;
  };

  Var push(Node node);
  const Matrix& val(int id) const;
  void eval(Node& n);
  void propagate(Node& n);

  std::vector<Node> nodes_;
  std::vector<Var> parameters_;
  Var loss_;
  bool forward_done_ = false;
};

struct FiniteDiffReport {
  /// Relative error, switching to absolute where both gradients are below 1e-6.
  double max_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t components = 0;
};

/// Central-difference gradient check of every parameter component.
/// h must lie in [1e-7, 1e-3]; masks bound as inputs stay frozen.
FiniteDiffReport finite_diff_check(Tape& tape, const Bindings& bindings, double h);

/// Matrix kernels shared with the optimizer and inference paths.
void matmul_into(const Matrix& a, const Matrix& b, Matrix& out);

}  // namespace loadcast::autodiff
