#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qg/numeric/rng.hpp"
#include "qg/numeric/tensor.hpp"

namespace qg {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

/// Reverse-mode recording of a computation over matrices.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; backward() walks it once in reverse. A tape built with
/// `record = false` keeps forward values only and cannot be differentiated.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, int)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Mat value) { return push(std::move(value), nullptr); }

  /// References a matrix owned elsewhere; it must outlive the tape.
  Var<Scalar> external(const Mat& value) {
    Node& n = nodes_.emplace_back();
    n.external = &value;
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  /// Leaf bound to a parameter; backward() accumulates into its grad.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    Node& n = nodes_.emplace_back();
    n.external = &p.value;
    if (record_) n.param = &p;
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  Var<Scalar> push(Mat value, BackwardFn fn) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    if (record_) n.backward = std::move(fn);
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.owned;
  }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  Mat& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      const Mat& v = n.external ? *n.external : n.owned;
      n.grad = Mat::Zero(v.rows(), v.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

  /// Propagates d(loss)/d(node) to every node and adds the parameter
  /// gradients into Parameter::grad. Can be replayed; each call starts from
  /// cleared node gradients.
  void backward(Var<Scalar> loss) {
    if (!record_) throw Error("backward() on a tape that was not recording");
    if (loss.tape != this) throw Error("backward() on a value from another tape");
    const auto& v = value(loss.id);
    if (v.rows() != 1 || v.cols() != 1) {
      throw ShapeError("backward() needs a scalar loss, got " + shape_string(v));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    grad(loss.id)(0, 0) = Scalar(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.has_grad) continue;
      if (n.param) {
        n.param->grad += n.grad;
      } else if (n.backward) {
        n.backward(*this, id);
      }
    }
  }

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Parameter<Scalar>* param = nullptr;
    Mat grad;
    bool has_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void require_same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
}

template <typename Scalar>
void require_same_shape(const char* op, Var<Scalar> a, Var<Scalar> b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                     shape_string(b.value()));
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_string(a.value()) + " vs " +
                     shape_string(b.value()));
  }
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape->push(std::move(out), [a, b](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(a.id).noalias() += g * t.value(b.id).transpose();
    t.grad(b.id).noalias() += t.value(a.id).transpose() * g;
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("add", a, b);
  return a.tape->push(a.value() + b.value(), [a, b](Tape<Scalar>& t, int self) {
    t.grad(a.id) += t.grad(self);
    t.grad(b.id) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("sub", a, b);
  return a.tape->push(a.value() - b.value(), [a, b](Tape<Scalar>& t, int self) {
    t.grad(a.id) += t.grad(self);
    t.grad(b.id) -= t.grad(self);
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> cmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("cmul", a, b);
  return a.tape->push(a.value().cwiseProduct(b.value()), [a, b](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
}

/// Multiplies a matrix by a 1x1 value.
template <typename Scalar>
Var<Scalar> scale_by(Var<Scalar> a, Var<Scalar> s) {
  detail::require_same_tape(a, s);
  if (s.rows() != 1 || s.cols() != 1) {
    throw ShapeError("scale_by: scale must be [1x1], got " + shape_string(s.value()));
  }
  return a.tape->push(a.value() * s.scalar(), [a, s](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(a.id) += g * t.value(s.id)(0, 0);
    t.grad(s.id)(0, 0) += g.cwiseProduct(t.value(a.id)).sum();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  return a.tape->push(a.value() * factor, [a, factor](Tape<Scalar>& t, int self) {
    t.grad(a.id) += t.grad(self) * factor;
  });
}

/// 1 - a, elementwise.
template <typename Scalar>
Var<Scalar> one_minus(Var<Scalar> a) {
  Matrix<Scalar> out = (-a.value().array() + Scalar(1)).matrix();
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    t.grad(a.id) -= t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Matrix<Scalar> out =
      a.value().unaryExpr([](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); });
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    t.grad(a.id).array() += t.grad(self).array() * y.array() * (Scalar(1) - y.array());
  });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    t.grad(a.id).array() += t.grad(self).array() * (Scalar(1) - y.array().square());
  });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().log().matrix();
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    t.grad(a.id).array() += t.grad(self).array() / t.value(a.id).array();
  });
}

/// Column-wise softmax. Rows listed in `masked_rows` get zero probability
/// (an energy of minus infinity).
template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> a, std::span<const int> masked_rows = {}) {
  const auto& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  std::vector<bool> masked(static_cast<std::size_t>(x.rows()), false);
  for (int r : masked_rows) {
    if (r < 0 || r >= x.rows()) throw ShapeError("softmax: mask row out of range");
    masked[static_cast<std::size_t>(r)] = true;
  }
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Scalar hi = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (!masked[static_cast<std::size_t>(r)]) hi = std::max(hi, x(r, c));
    }
    Scalar total(0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar e = masked[static_cast<std::size_t>(r)] ? Scalar(0) : std::exp(x(r, c) - hi);
      out(r, c) = e;
      total += e;
    }
    out.col(c) /= total;
  }
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      const Scalar dot = y.col(c).dot(g.col(c));
      ga.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
    }
  });
}

/// Inverted dropout: in training, zeroes each entry with probability p and
/// scales survivors by 1/(1-p). Identity when not training or p == 0.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> a, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw Error("dropout probability must lie in [0, 1)");
  if (!train || p == 0.0) return a;
  const auto& x = a.value();
  Matrix<Scalar> mask(x.rows(), x.cols());
  const Scalar keep = Scalar(1) / Scalar(1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask(i) = rng.uniform() < p ? Scalar(0) : keep;
  }
  Matrix<Scalar> out = x.cwiseProduct(mask);
  return a.tape->push(std::move(out), [a, mask = std::move(mask)](Tape<Scalar>& t, int self) {
    t.grad(a.id) += t.grad(self).cwiseProduct(mask);
  });
}

/// Column `index` of an embedding table (dim x entries). The gradient is
/// written straight into that column of the parameter.
template <typename Scalar>
Var<Scalar> embedding_lookup(Tape<Scalar>& tape, Parameter<Scalar>& table, int index) {
  if (index < 0 || index >= table.value.cols()) {
    throw ShapeError("embedding_lookup: index " + std::to_string(index) + " outside table " +
                     table.name + " " + shape_string(table.value));
  }
  Matrix<Scalar> out = table.value.col(index);
  Parameter<Scalar>* p = &table;
  return tape.push(std::move(out), [p, index](Tape<Scalar>& t, int self) {
    p->grad.col(index) += t.grad(self);
  });
}

/// out[indices[i]] += a[i] for a column vector a; out has `size` rows.
template <typename Scalar>
Var<Scalar> scatter_add(Var<Scalar> a, std::vector<int> indices, int size) {
  const auto& x = a.value();
  if (x.cols() != 1 || x.rows() != static_cast<Eigen::Index>(indices.size())) {
    throw ShapeError("scatter_add: shape mismatch " + shape_string(x) + " vs " +
                     std::to_string(indices.size()) + " indices");
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(size, 1);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= size) throw ShapeError("scatter_add: index out of range");
    out(indices[i], 0) += x(static_cast<Eigen::Index>(i), 0);
  }
  return a.tape->push(std::move(out), [a, indices = std::move(indices)](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < indices.size(); ++i) ga(static_cast<Eigen::Index>(i), 0) += g(indices[i], 0);
  });
}

/// Stacks values vertically; all parts must share a column count.
template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Eigen::Index rows = 0;
  const auto cols = parts[0].cols();
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    if (p.cols() != cols) {
      throw ShapeError("concat: shape mismatch " + shape_string(parts[0].value()) + " vs " +
                       shape_string(p.value()));
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var<Scalar>> inputs(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), [inputs = std::move(inputs)](Tape<Scalar>& t, int self) {
    Eigen::Index r = 0;
    for (const auto& p : inputs) {
      const auto n = t.value(p.id).rows();
      t.grad(p.id) += t.grad(self).middleRows(r, n);
      r += n;
    }
  });
}

template <typename Scalar>
Var<Scalar> concat(std::initializer_list<Var<Scalar>> parts) {
  return concat(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

/// Places column vectors side by side.
template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> columns) {
  if (columns.empty()) throw ShapeError("concat_cols: no inputs");
  const auto rows = columns[0].rows();
  for (const auto& c : columns) {
    detail::require_same_tape(columns[0], c);
    if (c.rows() != rows || c.cols() != 1) {
      throw ShapeError("concat_cols: shape mismatch " + shape_string(columns[0].value()) + " vs " +
                       shape_string(c.value()));
    }
  }
  Matrix<Scalar> out(rows, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = columns[i].value();
  std::vector<Var<Scalar>> inputs(columns.begin(), columns.end());
  return columns[0].tape->push(std::move(out), [inputs = std::move(inputs)](Tape<Scalar>& t, int self) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      t.grad(inputs[i].id) += t.grad(self).col(static_cast<Eigen::Index>(i));
    }
  });
}

/// Rows [start, start + count).
template <typename Scalar>
Var<Scalar> slice(Var<Scalar> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > a.rows()) {
    throw ShapeError("slice: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_string(a.value()));
  }
  Matrix<Scalar> out = a.value().middleRows(start, count);
  return a.tape->push(std::move(out), [a, start, count](Tape<Scalar>& t, int self) {
    t.grad(a.id).middleRows(start, count) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().transpose();
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    t.grad(a.id) += t.grad(self).transpose();
  });
}

/// Entry (row, col) as a 1x1 value.
template <typename Scalar>
Var<Scalar> pick(Var<Scalar> a, Eigen::Index row, Eigen::Index col = 0) {
  if (row < 0 || row >= a.rows() || col < 0 || col >= a.cols()) {
    throw ShapeError("pick: (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                     shape_string(a.value()));
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value()(row, col);
  return a.tape->push(std::move(out), [a, row, col](Tape<Scalar>& t, int self) {
    t.grad(a.id)(row, col) += t.grad(self)(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), [a](Tape<Scalar>& t, int self) {
    t.grad(a.id).array() += t.grad(self)(0, 0);
  });
}

/// Sum of 1x1 values, accumulated left to right.
template <typename Scalar>
Var<Scalar> add_all(std::span<const Var<Scalar>> terms) {
  if (terms.empty()) throw ShapeError("add_all: no inputs");
  Var<Scalar> total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

}  // namespace qg
