#include "loadcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "loadcast/error.hpp"

namespace loadcast::autodiff {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

bool broadcastable(const Matrix& operand, std::size_t rows, std::size_t cols) {
  if (operand.rows() == rows && operand.cols() == cols) return true;
  if (operand.rows() == 1 && operand.cols() == 1) return true;
  return operand.rows() == 1 && operand.cols() == cols;
}

// Result shape of a broadcasting binary op.
void broadcast_shape(const Matrix& a, const Matrix& b, std::size_t& rows, std::size_t& cols) {
  rows = std::max(a.rows(), b.rows());
  cols = std::max(a.cols(), b.cols());
  if (!broadcastable(a, rows, cols) || !broadcastable(b, rows, cols)) {
    fail(ErrorCode::ShapeError, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
}

inline std::size_t bidx(const Matrix& m, std::size_t r, std::size_t c) {
  return (m.rows() == 1 ? 0 : r) * m.cols() + (m.cols() == 1 ? 0 : c);
}

// Accumulates `g` (result-shaped) into `target`, summing broadcast axes.
void reduce_into(const Matrix& g, Matrix& target) {
  if (g.same_shape(target)) {
    double* t = target.data();
    const double* s = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) t[i] += s[i];
    return;
  }
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) target[bidx(target, r, c)] += g(r, c);
  }
}

}  // namespace

void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::ShapeError, "matmul " + shape_str(a) + " * " + shape_str(b));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  out.reset(n, m);
  double* o = out.data();
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = o + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void Bindings::bind(Var v, const Matrix& value) {
  if (!v.valid()) fail(ErrorCode::StateError, "binding an invalid variable");
  if (slots_.size() <= static_cast<std::size_t>(v.id)) slots_.resize(v.id + 1, nullptr);
  slots_[v.id] = &value;
}

const Matrix* Bindings::find(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= slots_.size()) return nullptr;
  return slots_[v.id];
}

Var Tape::push(Node node) {
  for (int in : node.inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      fail(ErrorCode::StateError, "operand does not belong to this tape");
    }
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(std::string name) {
  Node n;
  n.op = Op::Input;
  n.name = std::move(name);
  return push(std::move(n));
}

Var Tape::parameter(std::string name) {
  Node n;
  n.op = Op::Parameter;
  n.name = std::move(name);
  n.requires_grad = true;
  const Var v = push(std::move(n));
  parameters_.push_back(v);
  return v;
}

#define LOADCAST_UNARY(fn, tag)   \
  Var Tape::fn(Var x) {           \
    Node n;                       \
    n.op = Op::tag;               \
    n.inputs = {x.id};            \
    return push(std::move(n));    \
  }

LOADCAST_UNARY(sigmoid, Sigmoid)
LOADCAST_UNARY(tanh, Tanh)
LOADCAST_UNARY(softplus, Softplus)
LOADCAST_UNARY(log, Log)
LOADCAST_UNARY(square, Square)
LOADCAST_UNARY(reciprocal, Reciprocal)
LOADCAST_UNARY(sum, Sum)
#undef LOADCAST_UNARY

#define LOADCAST_BINARY(fn, tag)  \
  Var Tape::fn(Var a, Var b) {    \
    Node n;                       \
    n.op = Op::tag;               \
    n.inputs = {a.id, b.id};      \
    return push(std::move(n));    \
  }

LOADCAST_BINARY(add, Add)
LOADCAST_BINARY(sub, Sub)
LOADCAST_BINARY(mul, Mul)
LOADCAST_BINARY(matmul, MatMul)
#undef LOADCAST_BINARY

Var Tape::leaky_relu(Var x, double alpha) {
  Node n;
  n.op = Op::LeakyRelu;
  n.inputs = {x.id};
  n.alpha = alpha;
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {x.id};
  n.alpha = factor;
  return push(std::move(n));
}

Var Tape::add_const(Var x, double c) {
  Node n;
  n.op = Op::AddConst;
  n.inputs = {x.id};
  n.alpha = c;
  return push(std::move(n));
}

Var Tape::slice_cols(Var x, std::size_t lo, std::size_t hi) {
  if (hi <= lo) fail(ErrorCode::ShapeError, "empty column slice");
  Node n;
  n.op = Op::Slice;
  n.inputs = {x.id};
  n.lo = lo;
  n.hi = hi;
  return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::ShapeError, "concat of nothing");
  Node n;
  n.op = Op::Concat;
  for (Var p : parts) n.inputs.push_back(p.id);
  return push(std::move(n));
}

Var Tape::dropout(Var x, Var mask, double p) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorCode::DomainError, "dropout probability must lie in [0, 1)");
  Node n;
  n.op = Op::Dropout;
  n.inputs = {x.id, mask.id};
  n.alpha = p;
  return push(std::move(n));
}

const Matrix& Tape::val(int id) const {
  const Node& n = nodes_[id];
  return n.bound ? *n.bound : n.value;
}

const Matrix& Tape::value(Var v) const {
  if (!forward_done_) fail(ErrorCode::StateError, "value requested before forward");
  return val(v.id);
}

const Matrix& Tape::grad(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    fail(ErrorCode::StateError, "unknown variable");
  }
  return nodes_[v.id].grad;
}

const std::string& Tape::name(Var v) const { return nodes_.at(v.id).name; }
Op Tape::op(Var v) const { return nodes_.at(v.id).op; }

void Tape::eval(Node& n) {
  Matrix& out = n.value;
  switch (n.op) {
    case Op::Input:
    case Op::Parameter:
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Matrix& a = val(n.inputs[0]);
      const Matrix& b = val(n.inputs[1]);
      std::size_t rows, cols;
      broadcast_shape(a, b, rows, cols);
      out.reset(rows, cols);
      const bool same = a.same_shape(out) && b.same_shape(out);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const double x = same ? a[i] : a[bidx(a, r, c)];
          const double y = same ? b[i] : b[bidx(b, r, c)];
          out[i] = n.op == Op::Add ? x + y : n.op == Op::Sub ? x - y : x * y;
        }
      }
      return;
    }
    case Op::MatMul:
      matmul_into(val(n.inputs[0]), val(n.inputs[1]), out);
      return;
    case Op::Dropout: {
      const Matrix& x = val(n.inputs[0]);
      const Matrix& mask = val(n.inputs[1]);
      if (!mask.same_shape(x)) {
        fail(ErrorCode::ShapeError, "dropout mask " + shape_str(mask) + " vs " + shape_str(x));
      }
      const double keep = 1.0 / (1.0 - n.alpha);
      out.reset(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i] * keep;
      return;
    }
    case Op::Slice: {
      const Matrix& x = val(n.inputs[0]);
      if (n.hi > x.cols()) fail(ErrorCode::ShapeError, "slice beyond " + shape_str(x));
      const std::size_t w = n.hi - n.lo;
      out.reset(x.rows(), w);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        std::copy_n(x.data() + r * x.cols() + n.lo, w, out.data() + r * w);
      }
      return;
    }
    case Op::Concat: {
      const std::size_t rows = val(n.inputs[0]).rows();
      std::size_t cols = 0;
      for (int in : n.inputs) {
        if (val(in).rows() != rows) fail(ErrorCode::ShapeError, "concat row mismatch");
        cols += val(in).cols();
      }
      out.reset(rows, cols);
      std::size_t off = 0;
      for (int in : n.inputs) {
        const Matrix& x = val(in);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(x.data() + r * x.cols(), x.cols(), out.data() + r * cols + off);
        }
        off += x.cols();
      }
      return;
    }
    case Op::Sum: {
      const Matrix& x = val(n.inputs[0]);
      double s = 0.0;
      for (double v : x.values()) s += v;
      out.reset(1, 1, s);
      return;
    }
    default:
      break;
  }

  const Matrix& x = val(n.inputs[0]);
  out.reset(x.rows(), x.cols());
  const double* in = x.data();
  double* o = out.data();
  const std::size_t size = x.size();
  switch (n.op) {
    case Op::Sigmoid:
      for (std::size_t i = 0; i < size; ++i) o[i] = sigmoid_scalar(in[i]);
      break;
    case Op::Tanh:
      for (std::size_t i = 0; i < size; ++i) o[i] = std::tanh(in[i]);
      break;
    case Op::LeakyRelu:
      for (std::size_t i = 0; i < size; ++i) o[i] = in[i] > 0 ? in[i] : n.alpha * in[i];
      break;
    case Op::Softplus:
      for (std::size_t i = 0; i < size; ++i) o[i] = softplus_scalar(in[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < size; ++i) o[i] = std::log(in[i]);
      break;
    case Op::Square:
      for (std::size_t i = 0; i < size; ++i) o[i] = in[i] * in[i];
      break;
    case Op::Reciprocal:
      for (std::size_t i = 0; i < size; ++i) o[i] = 1.0 / in[i];
      break;
    case Op::Scale:
      for (std::size_t i = 0; i < size; ++i) o[i] = n.alpha * in[i];
      break;
    case Op::AddConst:
      for (std::size_t i = 0; i < size; ++i) o[i] = in[i] + n.alpha;
      break;
    default:
      fail(ErrorCode::StateError, "unhandled op");
  }
}

double Tape::forward(const Bindings& bindings) {
  if (!loss_.valid()) fail(ErrorCode::StateError, "tape has no loss node");
  forward_done_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::Input || n.op == Op::Parameter) {
      n.bound = bindings.find(Var{static_cast<int>(i)});
      if (!n.bound) fail(ErrorCode::StateError, "unbound placeholder '" + n.name + "'");
      continue;
    }
    eval(n);
  }
  const Matrix& l = val(loss_.id);
  if (l.size() != 1) fail(ErrorCode::ShapeError, "loss must be scalar, got " + shape_str(l));
  forward_done_ = true;
  return l[0];
}

void Tape::propagate(Node& n) {
  const Matrix& g = n.grad;
  const auto wants = [&](int k) -> Node* {
    Node& in = nodes_[n.inputs[k]];
    return in.requires_grad ? &in : nullptr;
  };

  switch (n.op) {
    case Op::Input:
    case Op::Parameter:
      return;
    case Op::Add:
      if (Node* a = wants(0)) reduce_into(g, a->grad);
      if (Node* b = wants(1)) reduce_into(g, b->grad);
      return;
    case Op::Sub:
      if (Node* a = wants(0)) reduce_into(g, a->grad);
      if (Node* b = wants(1)) {
        Matrix neg = g;
        for (double& v : neg.values()) v = -v;
        reduce_into(neg, b->grad);
      }
      return;
    case Op::Mul: {
      const Matrix& av = val(n.inputs[0]);
      const Matrix& bv = val(n.inputs[1]);
      for (int k = 0; k < 2; ++k) {
        Node* target = wants(k);
        if (!target) continue;
        const Matrix& other = k == 0 ? bv : av;
        Matrix local(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) {
            local(r, c) = g(r, c) * other[bidx(other, r, c)];
          }
        }
        reduce_into(local, target->grad);
      }
      return;
    }
    case Op::MatMul: {
      const Matrix& a = val(n.inputs[0]);
      const Matrix& b = val(n.inputs[1]);
      const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
      if (Node* ta = wants(0)) {
        // dA += G * B^T
        double* da = ta->grad.data();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* grow = g.data() + i * cols;
          for (std::size_t p = 0; p < inner; ++p) {
            const double* brow = b.data() + p * cols;
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += grow[j] * brow[j];
            da[i * inner + p] += s;
          }
        }
      }
      if (Node* tb = wants(1)) {
        // dB += A^T * G
        double* db = tb->grad.data();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* grow = g.data() + i * cols;
          for (std::size_t p = 0; p < inner; ++p) {
            const double av = a.data()[i * inner + p];
            if (av == 0.0) continue;
            double* dbrow = db + p * cols;
            for (std::size_t j = 0; j < cols; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
      return;
    }
    case Op::Dropout:
      if (Node* x = wants(0)) {
        const Matrix& mask = val(n.inputs[1]);
        const double keep = 1.0 / (1.0 - n.alpha);
        for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i] * mask[i] * keep;
      }
      return;
    case Op::Slice:
      if (Node* x = wants(0)) {
        const std::size_t w = n.hi - n.lo;
        const std::size_t xc = x->grad.cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) x->grad[r * xc + n.lo + c] += g[r * w + c];
        }
      }
      return;
    case Op::Concat: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = val(n.inputs[k]).cols();
        if (Node* x = wants(static_cast<int>(k))) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < w; ++c) x->grad[r * w + c] += g[r * g.cols() + off + c];
          }
        }
        off += w;
      }
      return;
    }
    case Op::Sum:
      if (Node* x = wants(0)) {
        for (double& v : x->grad.values()) v += g[0];
      }
      return;
    default:
      break;
  }

  Node* target = wants(0);
  if (!target) return;
  const Matrix& x = val(n.inputs[0]);
  const Matrix& y = n.value;
  double* d = target->grad.data();
  const std::size_t size = x.size();
  switch (n.op) {
    case Op::Sigmoid:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    case Op::Tanh:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    case Op::LeakyRelu:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] * (x[i] > 0 ? 1.0 : n.alpha);
      break;
    case Op::Softplus:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] * sigmoid_scalar(x[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] / x[i];
      break;
    case Op::Square:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] * 2.0 * x[i];
      break;
    case Op::Reciprocal:
      for (std::size_t i = 0; i < size; ++i) d[i] -= g[i] * y[i] * y[i];
      break;
    case Op::Scale:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i] * n.alpha;
      break;
    case Op::AddConst:
      for (std::size_t i = 0; i < size; ++i) d[i] += g[i];
      break;
    default:
      fail(ErrorCode::StateError, "unhandled op in backward");
  }
}

void Tape::backward() {
  if (!forward_done_) fail(ErrorCode::StateError, "backward called before forward");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    const Matrix& v = val(static_cast<int>(i));
    if (n.requires_grad || n.op == Op::Parameter) {
      n.grad.reset(v.rows(), v.cols());
    } else {
      n.grad.reset(0, 0);
    }
  }
  Node& loss = nodes_[loss_.id];
  if (!loss.requires_grad) return;
  loss.grad[0] = 1.0;
  for (int i = loss_.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.op != Op::Input && n.op != Op::Parameter) propagate(n);
  }
}

FiniteDiffReport finite_diff_check(Tape& tape, const Bindings& bindings, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) fail(ErrorCode::DomainError, "finite-difference step outside [1e-7, 1e-3]");
  const auto& params = tape.parameters();
  std::vector<Matrix> local;
  local.reserve(params.size());
  Bindings perturbed = bindings;
  for (Var p : params) {
    const Matrix* m = bindings.find(p);
    if (!m) fail(ErrorCode::StateError, "unbound parameter '" + tape.name(p) + "'");
    local.push_back(*m);
  }
  for (std::size_t k = 0; k < params.size(); ++k) perturbed.bind(params[k], local[k]);

  tape.forward(perturbed);
  tape.backward();
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Var p : params) analytic.push_back(tape.grad(p));

  FiniteDiffReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& theta = local[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = tape.forward(perturbed);
      theta[i] = saved - h;
      const double down = tape.forward(perturbed);
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic[k][i];
      const double magnitude = std::max(std::abs(numeric), std::abs(exact));
      const double diff = std::abs(numeric - exact);
      const double err = magnitude < 1e-6 ? diff : diff / magnitude;
      ++report.components;
      if (!(err <= report.max_error)) {
        report.max_error = err;
        report.worst_parameter = tape.name(params[k]);
        report.worst_index = i;
      }
    }
  }
  tape.forward(bindings);
  return report;
}

}  // namespace loadcast::autodiff
