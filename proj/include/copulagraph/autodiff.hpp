#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "copulagraph/errors.hpp"
#include "copulagraph/graph.hpp"
#include "copulagraph/normal.hpp"

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records nodes in creation order, so recording order is a valid
// topological order and backward() is a single reverse sweep. Values are
// lightweight handles (tape pointer + node id) and stay valid as long as
// the tape does.
namespace copulagraph::ad {

class Tape;

class Value {
 public:
  Value() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the upstream gradient of the node being processed.
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Matrix v) { return push(std::move(v), false, {}, "constant"); }
  Value variable(Matrix v) { return push(std::move(v), true, {}, "variable"); }

  Value constant_scalar(double x) { return constant(Matrix::Constant(1, 1, x)); }

  // Records an op node; it requires a gradient iff some parent does.
  Value record(Matrix v, std::initializer_list<Value> parents, Backward fn, const char* op) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(v), needs, needs ? std::move(fn) : Backward{}, op);
  }

  void backward(const Value& root) {
    check_owner(root);
    if (root.rows() != 1 || root.cols() != 1) {
      throw ShapeError("backward() requires a 1x1 root, got " + shape_str(root.value()));
    }
    for (auto& node : nodes_) node.grad.resize(0, 0);
    nodes_[root.id()].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
      // Callbacks only touch earlier nodes' gradients.
      const Matrix upstream = node.grad;
      node.backward(*this, upstream);
    }
  }

  void accumulate(const Value& target, const Matrix& g) {
    Node& node = nodes_[target.id()];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }

  // Nodes the sweep never reached report a zero gradient.
  const Matrix& grad(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  static std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  Value push(Matrix v, bool requires_grad, Backward fn, const char* op) {
    if (!v.allFinite()) {
      throw NumericalError(std::string("non-finite value produced by ") + op);
    }
    nodes_.push_back(Node{std::move(v), Matrix(), std::move(fn), requires_grad});
    return Value(this, nodes_.size() - 1);
  }

  void check_owner(const Value& v) const {
    if (v.tape_ != this) throw ShapeError("value belongs to a different tape");
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Value::value() const { return tape_->value(id_); }
inline const Matrix& Value::grad() const { return tape_->grad(id_); }
inline bool Value::requires_grad() const { return tape_->requires_grad(id_); }
inline double Value::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on " + Tape::shape_str(value()));
  return value()(0, 0);
}

namespace detail {

inline void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                     Tape::shape_str(b.value()));
  }
}

inline void require_square(const Value& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw ShapeError(std::string(op) + ": expected a square matrix, got " +
                     Tape::shape_str(a.value()));
  }
}

inline void require_scalar(const Value& a, const char* op) {
  if (a.rows() != 1 || a.cols() != 1) {
    throw ShapeError(std::string(op) + ": expected 1x1, got " + Tape::shape_str(a.value()));
  }
}

// Elementwise unary op with derivative df evaluated at the input.
template <class F, class DF>
Value unary(const Value& a, F f, DF df, const char* op) {
  Matrix out = a.value().unaryExpr(f);
  return a.tape().record(
      std::move(out), {a},
      [a, df](Tape& t, const Matrix& g) {
        const Matrix& x = a.value();
        Matrix d(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i) d(i) = df(x(i));
        t.accumulate(a, g.cwiseProduct(d));
      },
      op);
}

// Cholesky that reports the first failing pivot.
inline Eigen::LLT<Matrix> factor_spd(const Matrix& a, const char* op) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  Matrix l = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.rows(); ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) {
      throw NumericalError(std::string(op) + ": matrix is not positive definite (pivot " +
                               std::to_string(j) + ")",
                           static_cast<std::size_t>(j));
    }
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < a.rows(); ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  throw NumericalError(std::string(op) + ": Cholesky factorization failed");
}

}  // namespace detail

inline Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + Tape::shape_str(a.value()) + " * " +
                     Tape::shape_str(b.value()));
  }
  return a.tape().record(
      a.value() * b.value(), {a, b},
      [a, b](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
      },
      "matmul");
}

inline Value add(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(
      a.value() + b.value(), {a, b},
      [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      "add");
}

inline Value sub(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(
      a.value() - b.value(), {a, b},
      [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
      },
      "sub");
}

inline Value mul(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "mul");
  return a.tape().record(
      a.value().cwiseProduct(b.value()), {a, b},
      [a, b](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
      },
      "mul");
}

inline Value scale(const Value& a, double c) {
  return a.tape().record(
      a.value() * c, {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); }, "scale");
}

// 1x1 value times matrix.
inline Value scale(const Value& s, const Value& a) {
  detail::require_scalar(s, "scale");
  return a.tape().record(
      a.value() * s.item(), {s, a},
      [s, a](Tape& t, const Matrix& g) {
        if (s.requires_grad()) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
        if (a.requires_grad()) t.accumulate(a, g * s.item());
      },
      "scale");
}

inline Value add_scalar(const Value& a, double c) {
  return a.tape().record(
      a.value().array() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); },
      "add_scalar");
}

// Adds a 1xC row to every row of an RxC matrix (layer bias).
inline Value add_bias(const Value& a, const Value& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_bias: bias " + Tape::shape_str(bias.value()) + " does not match " +
                     Tape::shape_str(a.value()));
  }
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return a.tape().record(
      std::move(out), {a, bias},
      [a, bias](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
      },
      "add_bias");
}

inline Value transpose(const Value& a) {
  return a.tape().record(
      a.value().transpose(), {a},
      [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); }, "transpose");
}

// Contiguous block.
inline Value slice(const Value& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows,
                   Eigen::Index cols) {
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw ShapeError("slice: block out of range for " + Tape::shape_str(a.value()));
  }
  return a.tape().record(
      a.value().block(row, col, rows, cols), {a},
      [a, row, col, rows, cols](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.block(row, col, rows, cols) = g;
        t.accumulate(a, full);
      },
      "slice");
}

inline Value slice_rows(const Value& a, Eigen::Index row, Eigen::Index rows) {
  return slice(a, row, 0, rows, a.cols());
}

inline Value slice_cols(const Value& a, Eigen::Index col, Eigen::Index cols) {
  return slice(a, 0, col, a.rows(), cols);
}

inline Value gather_rows(const Value& a, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= static_cast<std::size_t>(a.rows())) throw ShapeError("gather_rows: index out of range");
    out.row(k) = a.value().row(rows[k]);
  }
  Index idx(rows.begin(), rows.end());
  return a.tape().record(
      std::move(out), {a},
      [a, idx](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) full.row(idx[k]) += g.row(k);
        t.accumulate(a, full);
      },
      "gather_rows");
}

// Submatrix a[rows, cols].
inline Value gather(const Value& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (rows[i] >= static_cast<std::size_t>(a.rows()) || cols[j] >= static_cast<std::size_t>(a.cols())) {
        throw ShapeError("gather: index out of range");
      }
      out(i, j) = a.value()(rows[i], cols[j]);
    }
  }
  Index ri(rows.begin(), rows.end()), ci(cols.begin(), cols.end());
  return a.tape().record(
      std::move(out), {a},
      [a, ri, ci](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (std::size_t i = 0; i < ri.size(); ++i) {
          for (std::size_t j = 0; j < ci.size(); ++j) full(ri[i], ci[j]) += g(i, j);
        }
        t.accumulate(a, full);
      },
      "gather");
}

inline Value concat_cols(const Value& a, const Value& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ac = a.cols(), bc = b.cols();
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, ac, bc](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.leftCols(ac));
        if (b.requires_grad()) t.accumulate(b, g.rightCols(bc));
      },
      "concat_cols");
}

inline Value concat_rows(const Value& a, const Value& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column counts differ");
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  const Eigen::Index ar = a.rows(), br = b.rows();
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, ar, br](Tape& t, const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.topRows(ar));
        if (b.requires_grad()) t.accumulate(b, g.bottomRows(br));
      },
      "concat_rows");
}

inline Value sum(const Value& a) {
  return a.tape().record(
      Matrix::Constant(1, 1, a.value().sum()), {a},
      [a](Tape& t, const Matrix& g) { t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0))); },
      "sum");
}

inline Value mean(const Value& a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty matrix");
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(
      Matrix::Constant(1, 1, a.value().sum() / n), {a},
      [a, n](Tape& t, const Matrix& g) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
      },
      "mean");
}

// Row sums as a column vector.
inline Value row_sum(const Value& a) {
  return a.tape().record(
      a.value().rowwise().sum(), {a},
      [a](Tape& t, const Matrix& g) { t.accumulate(a, g.col(0).replicate(1, a.cols())); }, "row_sum");
}

// Main diagonal of a square matrix as an n x 1 column.
inline Value diag(const Value& a) {
  detail::require_square(a, "diag");
  return a.tape().record(
      a.value().diagonal(), {a},
      [a](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.diagonal() = g.col(0);
        t.accumulate(a, full);
      },
      "diag");
}

// n x 1 column to diagonal matrix.
inline Value diag_embed(const Value& v) {
  if (v.cols() != 1) throw ShapeError("diag_embed expects a column vector");
  Matrix out = v.value().col(0).asDiagonal();
  return v.tape().record(
      std::move(out), {v}, [v](Tape& t, const Matrix& g) { t.accumulate(v, g.diagonal()); },
      "diag_embed");
}

// Symmetric n x n matrix with out(u,v) = out(v,u) = w(e) for each edge e = (u,v).
inline Value scatter_edges(const Value& w, std::span<const Edge> edges, std::size_t n) {
  if (w.cols() != 1 || static_cast<std::size_t>(w.rows()) != edges.size()) {
    throw ShapeError("scatter_edges: expected " + std::to_string(edges.size()) + "x1 weights");
  }
  Matrix out = Matrix::Zero(n, n);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    out(edges[e].u, edges[e].v) = w.value()(e, 0);
    out(edges[e].v, edges[e].u) = w.value()(e, 0);
  }
  std::vector<Edge> es(edges.begin(), edges.end());
  return w.tape().record(
      std::move(out), {w},
      [w, es](Tape& t, const Matrix& g) {
        Matrix gw(es.size(), 1);
        for (std::size_t e = 0; e < es.size(); ++e) gw(e, 0) = g(es[e].u, es[e].v) + g(es[e].v, es[e].u);
        t.accumulate(w, gw);
      },
      "scatter_edges");
}

inline Value relu(const Value& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; },
      "relu");
}

inline Value tanh(const Value& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      },
      "tanh");
}

inline double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Value softplus(const Value& a) {
  return detail::unary(
      a, softplus_scalar, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, "softplus");
}

inline Value exp(const Value& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); }, "exp");
}

inline Value log(const Value& a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("log of a non-positive entry");
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; }, "log");
}

inline Value reciprocal(const Value& a) {
  if ((a.value().array() == 0.0).any()) throw DomainError("reciprocal of a zero entry");
  return detail::unary(
      a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); }, "reciprocal");
}

inline Value square(const Value& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; }, "square");
}

inline Value sqrt(const Value& a) {
  if ((a.value().array() < 0.0).any()) throw DomainError("sqrt of a negative entry");
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); }, "sqrt");
}

inline Value rsqrt(const Value& a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("rsqrt of a non-positive entry");
  return detail::unary(
      a, [](double x) { return 1.0 / std::sqrt(x); },
      [](double x) { return -0.5 / (x * std::sqrt(x)); }, "rsqrt");
}

// Elementwise min(max(x, lo), hi); zero gradient where clipped.
inline Value clamp(const Value& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x) { return (x < lo || x > hi) ? 0.0 : 1.0; }, "clamp");
}

inline Value normal_cdf(const Value& a) {
  return detail::unary(a, normal::cdf, normal::pdf, "normal_cdf");
}

// Elementwise inverse standard normal CDF; d/du = 1 / phi(quantile(u)).
inline Value normal_quantile(const Value& u) {
  const auto& v = u.value();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v(i) > 0.0 && v(i) < 1.0)) {
      throw DomainError("normal_quantile: entry " + std::to_string(i) + " = " + std::to_string(v(i)) +
                        " outside (0, 1)");
    }
  }
  Matrix z = v.unaryExpr([](double p) { return normal::quantile(p); });
  Matrix dz = z.unaryExpr([](double x) { return 1.0 / normal::pdf(x); });
  return u.tape().record(
      std::move(z), {u}, [u, dz](Tape& t, const Matrix& g) { t.accumulate(u, g.cwiseProduct(dz)); },
      "normal_quantile");
}

// log det of a symmetric positive definite matrix; gradient a^{-1}.
inline Value logdet_spd(const Value& a) {
  detail::require_square(a, "logdet_spd");
  auto llt = std::make_shared<Eigen::LLT<Matrix>>(detail::factor_spd(a.value(), "logdet_spd"));
  const double ld = 2.0 * llt->matrixLLT().diagonal().array().log().sum();
  return a.tape().record(
      Matrix::Constant(1, 1, ld), {a},
      [a, llt](Tape& t, const Matrix& g) {
        Matrix inv = llt->solve(Matrix::Identity(a.rows(), a.cols()));
        t.accumulate(a, g(0, 0) * 0.5 * (inv + inv.transpose()));
      },
      "logdet_spd");
}

// Inverse of a symmetric positive definite matrix; d(a^{-1}) = -a^{-1} da a^{-1}.
inline Value inverse_spd(const Value& a) {
  detail::require_square(a, "inverse_spd");
  auto llt = detail::factor_spd(a.value(), "inverse_spd");
  Matrix solved = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  auto inv = std::make_shared<const Matrix>(0.5 * (solved + solved.transpose()));
  return a.tape().record(
      *inv, {a},
      [a, inv](Tape& t, const Matrix& g) { t.accumulate(a, -((*inv) * g * (*inv))); },
      "inverse_spd");
}

// Scalar helpers for readable composite expressions.
inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, double c) { return scale(a, c); }
inline Value operator*(double c, const Value& a) { return scale(a, c); }

}  // namespace copulagraph::ad
