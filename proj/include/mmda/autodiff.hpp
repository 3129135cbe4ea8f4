#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass; backward() walks it in
// reverse and accumulates adjoints. Parameters live outside the tape and
// receive their gradients through Tape::backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mmda/core_types.hpp"

namespace mmda {

/// A trainable tensor: value plus accumulated gradient.
struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  explicit Parameter(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;  // propagates grad of node to inputs
    Parameter* param = nullptr;
  };

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Leaf bound to a parameter; a constant when gradients are disabled.
  Var param(Parameter& p) {
    if (!grad_enabled_) return constant(p.value);
    Var v = push(p.value, true, nullptr);
    nodes_[static_cast<std::size_t>(v.id())].param = &p;
    return v;
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Adjoint accumulator of a node; allocated on first use.
  Matrix& grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename F>
  Var record(Matrix value, std::initializer_list<Var> inputs, F&& backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || needs_grad(in.id());
    Var v = push(std::move(value), needs, nullptr);
    if (needs) nodes_[static_cast<std::size_t>(v.id())].backward = std::forward<F>(backward);
    return v;
  }

  template <typename F>
  Var record(Matrix value, const std::vector<Var>& inputs, F&& backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || needs_grad(in.id());
    Var v = push(std::move(value), needs, nullptr);
    if (needs) nodes_[static_cast<std::size_t>(v.id())].backward = std::forward<F>(backward);
    return v;
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and accumulates parameter grads.
  void backward(Var root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw ShapeError("backward() requires a scalar root");
    }
    grad(root.id()).setConstant(1.0);
    for (int id = root.id(); id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  Var push(Matrix value, bool needs, Parameter* p) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs, nullptr, p});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

namespace ad {

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}
inline void accumulate(Tape& t, Var v, const Matrix& g) {
  if (t.needs_grad(v.id())) t.grad(v.id()) += g;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.grad(a.id()).noalias() += g * b.value().transpose();
    if (t.needs_grad(b.id())) t.grad(b.id()).noalias() += a.value().transpose() * g;
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.grad(a.id()).noalias() += g * b.value();
    if (t.needs_grad(b.id())) t.grad(b.id()).noalias() += g.transpose() * a.value();
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    Matrix g = t.grad(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    Matrix g = t.grad(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, -g);
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape();
  return t.record(a.value() * c, {a}, [a, c](Tape& t, int self) {
    detail::accumulate(t, a, t.grad(self) * c);
  });
}

inline Var add_scalar(Var a, double c) {
  Tape& t = *a.tape();
  return t.record((a.value().array() + c).matrix(), {a}, [a](Tape& t, int self) {
    Matrix g = t.grad(self);
    detail::accumulate(t, a, g);
  });
}

/// s * a for a 1x1 variable s.
inline Var scalar_mul(Var s, Var a) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scalar_mul: s must be 1x1");
  Tape& t = *a.tape();
  return t.record(a.value() * s.scalar(), {s, a}, [s, a](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(s.id())) t.grad(s.id())(0, 0) += g.cwiseProduct(a.value()).sum();
    if (t.needs_grad(a.id())) t.grad(a.id()) += g * s.scalar();
  });
}

/// Adds a 1 x k row to every row of an n x k matrix.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bad row shape");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.grad(a.id()) += g;
    if (t.needs_grad(row.id())) t.grad(row.id()) += g.colwise().sum();
  });
}

/// Multiplies every row of an n x k matrix elementwise by a 1 x k row.
inline Var mul_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: bad row shape");
  Tape& t = *a.tape();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) {
      t.grad(a.id()).array() += g.array().rowwise() * row.value().row(0).array();
    }
    if (t.needs_grad(row.id())) t.grad(row.id()) += g.cwiseProduct(a.value()).colwise().sum();
  });
}

/// Multiplies row i of an n x k matrix by col(i, 0) of an n x 1 column.
inline Var mul_col(Var col, Var a) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("mul_col: bad column shape");
  Tape& t = *a.tape();
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.record(std::move(out), {col, a}, [col, a](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) {
      t.grad(a.id()).array() += g.array().colwise() * col.value().col(0).array();
    }
    if (t.needs_grad(col.id())) t.grad(col.id()) += g.cwiseProduct(a.value()).rowwise().sum();
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "hadamard");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.grad(a.id()) += g.cwiseProduct(b.value());
    if (t.needs_grad(b.id())) t.grad(b.id()) += g.cwiseProduct(a.value());
  });
}

// tanh approximation of GELU
inline double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
  constexpr double c = 0.7978845608028654;
  const double inner = c * (x + 0.044715 * x * x * x);
  const double th = std::tanh(inner);
  const double sech2 = 1.0 - th * th;
  return 0.5 * (1.0 + th) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Var gelu(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return t.record(std::move(out), {a}, [a](Tape& t, int self) {
    Matrix d = a.value().unaryExpr([](double x) { return gelu_derivative(x); });
    t.grad(a.id()) += t.grad(self).cwiseProduct(d);
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid_value(x); });
  return t.record(out, {a}, [a, out](Tape& t, int self) {
    t.grad(a.id()).array() += t.grad(self).array() * out.array() * (1.0 - out.array());
  });
}

inline Matrix softmax_rows_value(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  Matrix out = softmax_rows_value(a.value());
  return t.record(out, {a}, [a, out](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    // d x_j = y_j (g_j - sum_k g_k y_k)
    Vector dots = g.cwiseProduct(out).rowwise().sum();
    Matrix dx = out.array() * (g.colwise() - dots).array();
    t.grad(a.id()) += dx;
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Tape& t = *a.tape();
  return t.record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, int self) {
    t.grad(a.id()).middleCols(start, count) += t.grad(self);
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Tape& t = *a.tape();
  return t.record(a.value().middleRows(start, count), {a}, [a, start, count](Tape& t, int self) {
    t.grad(a.id()).middleRows(start, count) += t.grad(self);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, int self) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      if (t.needs_grad(p.id())) t.grad(p.id()) += t.grad(self).middleCols(at, p.cols());
      at += p.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, int self) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      if (t.needs_grad(p.id())) t.grad(p.id()) += t.grad(self).middleRows(at, p.rows());
      at += p.rows();
    }
  });
}

/// Mean over consecutive row blocks; `offsets` has B+1 entries.
inline Var block_mean_rows(Var a, const std::vector<Eigen::Index>& offsets) {
  Tape& t = *a.tape();
  const auto b = static_cast<Eigen::Index>(offsets.size()) - 1;
  Matrix out(b, a.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto n = offsets[i + 1] - offsets[i];
    out.row(i) = a.value().middleRows(offsets[i], n).colwise().mean();
  }
  return t.record(std::move(out), {a}, [a, offsets, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id());
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto n = offsets[i + 1] - offsets[i];
      ga.middleRows(offsets[i], n).rowwise() += g.row(i) / static_cast<double>(n);
    }
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& t, int self) {
    t.grad(a.id()).array() += t.grad(self)(0, 0);
  });
}

inline Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Batch normalization over rows (each column normalized with its own
/// statistics), followed by a learnable per-column affine map.
struct BatchNormResult {
  Var out;
  RowVector batch_mean;
  RowVector batch_var;  // biased
};

inline BatchNormResult batch_norm_train(Var x, Var gamma, Var beta, double eps) {
  Tape& t = *x.tape();
  const double n = static_cast<double>(x.rows());
  RowVector mu = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mu;
  RowVector var = centered.array().square().colwise().sum() / n;
  RowVector inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Var normalized = t.record(xhat, {x}, [x, xhat, inv_std, n](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    // dx = inv_std / n * (n g - sum(g) - xhat * sum(g * xhat))
    RowVector sum_g = g.colwise().sum();
    RowVector sum_gx = g.cwiseProduct(xhat).colwise().sum();
    Matrix dx = (n * g).rowwise() - sum_g;
    dx -= (xhat.array().rowwise() * sum_gx.array()).matrix();
    dx = dx.array().rowwise() * (inv_std.array() / n);
    t.grad(x.id()) += dx;
  });
  return {add_row(mul_row(normalized, gamma), beta), mu, var};
}

inline Var batch_norm_eval(Var x, Var gamma, Var beta, const RowVector& running_mean,
                           const RowVector& running_var, double eps) {
  Tape& t = *x.tape();
  RowVector inv_std = (running_var.array() + eps).rsqrt();
  Var shifted = add_row(x, t.constant(-running_mean));
  Var normalized = mul_row(shifted, t.constant(inv_std));
  return add_row(mul_row(normalized, gamma), beta);
}

/// Elementwise binary cross-entropy -[t log q + (1 - t) log(1 - q)]. Each log
/// argument is floored at delta; a floored argument passes no gradient.
inline Var binary_xent(Var q, const Vector& target, double delta) {
  if (q.cols() != 1 || q.rows() != target.size()) throw ShapeError("binary_xent: bad shapes");
  Tape& t = *q.tape();
  const Eigen::Index n = q.rows();
  Matrix out(n, 1);
  Matrix dq(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = q.value()(i, 0), b = 1.0 - a;
    const double y = target(i);
    out(i, 0) = -(y * std::log(std::max(a, delta)) + (1.0 - y) * std::log(std::max(b, delta)));
    dq(i, 0) = (a > delta ? -y / a : 0.0) + (b > delta ? (1.0 - y) / b : 0.0);
  }
  return t.record(std::move(out), {q}, [q, dq](Tape& t, int self) {
    t.grad(q.id()) += t.grad(self).cwiseProduct(dq);
  });
}

/// Renormalized top-k mask of a row-stochastic gate matrix. Ties keep the
/// lower expert index.
inline Matrix topk_select(const Matrix& gate, int k) {
  Matrix mask = Matrix::Zero(gate.rows(), gate.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(gate.cols()));
  for (Eigen::Index r = 0; r < gate.rows(); ++r) {
    for (Eigen::Index c = 0; c < gate.cols(); ++c) order[static_cast<std::size_t>(c)] = c;
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return gate(r, x) > gate(r, y); });
    for (int j = 0; j < k; ++j) mask(r, order[static_cast<std::size_t>(j)]) = 1.0;
  }
  return mask;
}

inline Var topk_renormalize(Var gate, int k) {
  Tape& t = *gate.tape();
  Matrix mask = topk_select(gate.value(), k);
  Matrix kept = gate.value().cwiseProduct(mask);
  Vector totals = kept.rowwise().sum();
  Matrix out = kept.array().colwise() / totals.array();
  return t.record(out, {gate}, [gate, mask, totals, out](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    // For selected j: d out_i / d g_j = (delta_ij - out_i) / S
    Vector dots = g.cwiseProduct(out).rowwise().sum();
    Matrix dg = ((g.colwise() - dots).array().colwise() / totals.array()) * mask.array();
    t.grad(gate.id()) += dg;
  });
}

}  // namespace ad
}  // namespace mmda
