// Dense n-dimensional arrays with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle onto row-major storage. Operations take an
// explicit Graph which records a backward closure for every op whose
// inputs require gradients. Graph::backward walks the tape in reverse
// append order exactly once; leaf tensors accumulate gradients across
// graphs until zero_grad() is called.
//
// Broadcasting is limited to tensor-vs-scalar plus the named add_bias op.
// Every op output is checked for NaN/Inf and raises salad::NumericError.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace salad {

/// Raised whenever a NaN or Inf is produced.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ndgrad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Storage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t graph_id = 0;  // 0 for leaves

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

inline void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + what);
    }
  }
}

inline std::uint64_t next_graph_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

class Graph;

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : storage_(std::make_shared<detail::Storage>()) {
    for (auto dim : shape) {
      if (dim == 0) throw std::invalid_argument("tensor dimensions must be positive");
    }
    if (numel(shape) != values.size()) {
      throw std::invalid_argument("tensor shape " + shape_string(shape) +
                                  " does not match " + std::to_string(values.size()) +
                                  " values");
    }
    detail::check_finite(values, "tensor construction");
    storage_->shape = std::move(shape);
    storage_->value = std::move(values);
    storage_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  /// Row-major matrix from nested rows; rows must be equally long.
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false) {
    if (rows.empty() || rows.front().empty()) {
      throw std::invalid_argument("matrix needs at least one non-empty row");
    }
    std::vector<double> flat;
    flat.reserve(rows.size() * rows.front().size());
    for (const auto& row : rows) {
      if (row.size() != rows.front().size()) {
        throw std::invalid_argument("ragged matrix rows");
      }
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), rows.front().size()}, std::move(flat), requires_grad);
  }

  bool defined() const { return static_cast<bool>(storage_); }

  const Shape& shape() const { return storage().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t size() const { return storage().value.size(); }
  std::size_t rows() const { return rank() == 1 ? 1 : dim(0); }
  std::size_t cols() const { return rank() == 1 ? dim(0) : dim(1); }

  std::span<const double> values() const { return storage().value; }
  std::span<double> mutable_values() { return storage().value; }

  double operator[](std::size_t i) const { return storage().value[i]; }
  double at(std::size_t r, std::size_t c) const { return storage().value[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return storage().value[0];
  }

  bool requires_grad() const { return storage().requires_grad; }
  void set_requires_grad(bool flag) { storage().requires_grad = flag; }

  bool has_grad() const { return !storage().grad.empty(); }
  std::span<const double> grad() const { return storage().grad; }
  void zero_grad() { storage().grad.clear(); }

  bool is_leaf() const { return storage().graph_id == 0; }

  /// A fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach() const { return Tensor(shape(), storage().value, false); }

  /// Deep copy preserving requires_grad; gradient is not copied.
  Tensor clone() const { return Tensor(shape(), storage().value, requires_grad()); }

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  friend class Graph;

  detail::Storage& storage() const {
    if (!storage_) throw std::logic_error("use of undefined tensor");
    return *storage_;
  }

  std::shared_ptr<detail::Storage> storage_;
};

/// Tape of executed differentiable operations.
///
/// A Graph is confined to one thread. In no_grad mode nothing is recorded
/// and results never require gradients, which is what inference and
/// finite-difference evaluation use.
class Graph {
 public:
  enum class Mode { record, no_grad };

  explicit Graph(Mode mode = Mode::record) : id_(detail::next_graph_id()), mode_(mode) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == Mode::record; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor& loss) {
    auto& root = loss.storage();
    if (root.value.size() != 1) {
      throw std::invalid_argument("backward needs a scalar loss, got " +
                                  shape_string(root.shape));
    }
    if (consumed_) throw std::logic_error("backward called twice on the same graph");
    if (root.graph_id != id_) {
      throw std::logic_error("loss was not produced by this graph");
    }
    if (!root.requires_grad) {
      throw std::logic_error("loss does not depend on any differentiable tensor");
    }
    consumed_ = true;
    root.grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
    id_ = detail::next_graph_id();
  }

  // -- op-author interface --------------------------------------------------

  using Inputs = std::initializer_list<std::reference_wrapper<const Tensor>>;

  /// Builds an op result. The result requires grad when recording and any
  /// input does; `what` names the op in NaN/Inf diagnostics.
  Tensor result(Shape shape, std::vector<double> values, Inputs inputs,
                const char* what) {
    detail::check_finite(values, what);
    Tensor out;
    out.storage_ = std::make_shared<detail::Storage>();
    out.storage_->shape = std::move(shape);
    out.storage_->value = std::move(values);
    bool needs = false;
    if (recording()) {
      for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    }
    out.storage_->requires_grad = needs;
    out.storage_->graph_id = id_;
    return out;
  }

  /// Registers a backward closure; skipped when `out` needs no gradient.
  void record(const Tensor& out, std::function<void()> fn) {
    if (!out.requires_grad()) return;
    if (consumed_) throw std::logic_error("recording onto a consumed graph");
    nodes_.push_back(std::move(fn));
  }

  static detail::Storage& raw(const Tensor& t) { return t.storage(); }
  static std::shared_ptr<detail::Storage> handle(const Tensor& t) {
    t.storage();
    return t.storage_;
  }

 private:
  std::uint64_t id_;
  Mode mode_;
  bool consumed_ = false;
  std::vector<std::function<void()>> nodes_;
};

// -- elementwise --------------------------------------------------------------

enum class ElementwiseOp { add, sub, mul, div, exp, log, neg, square };

inline bool is_binary(ElementwiseOp op) {
  return op == ElementwiseOp::add || op == ElementwiseOp::sub ||
         op == ElementwiseOp::mul || op == ElementwiseOp::div;
}

namespace detail {

using StoragePtr = std::shared_ptr<Storage>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(what) + " expects a matrix, got " +
                                shape_string(t.shape()));
  }
}

}  // namespace detail

/// Binary tensor-tensor op; shapes must match exactly.
inline Tensor elementwise(Graph& g, ElementwiseOp op, const Tensor& a, const Tensor& b) {
  if (!is_binary(op)) throw std::invalid_argument("elementwise: unary op given two operands");
  detail::require_same_shape(a, b, "elementwise");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  switch (op) {
    case ElementwiseOp::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case ElementwiseOp::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case ElementwiseOp::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case ElementwiseOp::div:
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (bv[i] == 0.0) throw std::domain_error("elementwise div: division by zero");
        out[i] = av[i] / bv[i];
      }
      break;
    default:
      break;
  }
  Tensor result = g.result(a.shape(), std::move(out), {a, b}, "elementwise");
  g.record(result, [op, ra = Graph::handle(a), rb = Graph::handle(b),
                    ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    const auto& up = ro->grad;
    const auto n = up.size();
    if (ra->requires_grad) {
      ra->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case ElementwiseOp::mul: ra->grad[i] += up[i] * rb->value[i]; break;
          case ElementwiseOp::div: ra->grad[i] += up[i] / rb->value[i]; break;
          default: ra->grad[i] += up[i]; break;
        }
      }
    }
    if (rb->requires_grad) {
      rb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case ElementwiseOp::add: rb->grad[i] += up[i]; break;
          case ElementwiseOp::sub: rb->grad[i] -= up[i]; break;
          case ElementwiseOp::mul: rb->grad[i] += up[i] * ra->value[i]; break;
          case ElementwiseOp::div:
            rb->grad[i] -= up[i] * ra->value[i] / (rb->value[i] * rb->value[i]);
            break;
          default: break;
        }
      }
    }
  });
  return result;
}

/// Binary tensor-scalar op, scalar on the right.
inline Tensor elementwise(Graph& g, ElementwiseOp op, const Tensor& a, double b) {
  if (!is_binary(op)) throw std::invalid_argument("elementwise: unary op given two operands");
  if (op == ElementwiseOp::div && b == 0.0) {
    throw std::domain_error("elementwise div: division by zero");
  }
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case ElementwiseOp::add: out[i] = av[i] + b; break;
      case ElementwiseOp::sub: out[i] = av[i] - b; break;
      case ElementwiseOp::mul: out[i] = av[i] * b; break;
      case ElementwiseOp::div: out[i] = av[i] / b; break;
      default: break;
    }
  }
  Tensor result = g.result(a.shape(), std::move(out), {a}, "elementwise");
  g.record(result, [op, b, ra = Graph::handle(a), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    double scale = 1.0;
    if (op == ElementwiseOp::mul) scale = b;
    if (op == ElementwiseOp::div) scale = 1.0 / b;
    ra->ensure_grad();
    for (std::size_t i = 0; i < ro->grad.size(); ++i) ra->grad[i] += scale * ro->grad[i];
  });
  return result;
}

/// Unary op: exp, log, neg, square.
inline Tensor elementwise(Graph& g, ElementwiseOp op, const Tensor& a) {
  if (is_binary(op)) throw std::invalid_argument("elementwise: binary op given one operand");
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case ElementwiseOp::exp: out[i] = std::exp(av[i]); break;
      case ElementwiseOp::log:
        if (!(av[i] > 0.0)) throw std::domain_error("elementwise log: non-positive input");
        out[i] = std::log(av[i]);
        break;
      case ElementwiseOp::neg: out[i] = -av[i]; break;
      case ElementwiseOp::square: out[i] = av[i] * av[i]; break;
      default: break;
    }
  }
  Tensor result = g.result(a.shape(), std::move(out), {a}, "elementwise");
  g.record(result, [op, ra = Graph::handle(a), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    ra->ensure_grad();
    const auto& up = ro->grad;
    for (std::size_t i = 0; i < up.size(); ++i) {
      switch (op) {
        case ElementwiseOp::exp: ra->grad[i] += up[i] * ro->value[i]; break;
        case ElementwiseOp::log: ra->grad[i] += up[i] / ra->value[i]; break;
        case ElementwiseOp::neg: ra->grad[i] -= up[i]; break;
        case ElementwiseOp::square: ra->grad[i] += 2.0 * up[i] * ra->value[i]; break;
        default: break;
      }
    }
  });
  return result;
}

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) { return elementwise(g, ElementwiseOp::add, a, b); }
inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return elementwise(g, ElementwiseOp::sub, a, b); }
inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) { return elementwise(g, ElementwiseOp::mul, a, b); }
inline Tensor div(Graph& g, const Tensor& a, const Tensor& b) { return elementwise(g, ElementwiseOp::div, a, b); }
inline Tensor add(Graph& g, const Tensor& a, double b) { return elementwise(g, ElementwiseOp::add, a, b); }
inline Tensor mul(Graph& g, const Tensor& a, double b) { return elementwise(g, ElementwiseOp::mul, a, b); }
inline Tensor div(Graph& g, const Tensor& a, double b) { return elementwise(g, ElementwiseOp::div, a, b); }
inline Tensor exp(Graph& g, const Tensor& a) { return elementwise(g, ElementwiseOp::exp, a); }
inline Tensor log(Graph& g, const Tensor& a) { return elementwise(g, ElementwiseOp::log, a); }
inline Tensor neg(Graph& g, const Tensor& a) { return elementwise(g, ElementwiseOp::neg, a); }
inline Tensor square(Graph& g, const Tensor& a) { return elementwise(g, ElementwiseOp::square, a); }

// -- linear algebra -----------------------------------------------------------

inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions disagree " +
                                shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  Tensor result = g.result({m, n}, std::move(out), {a, b}, "matmul");
  g.record(result, [m, k, n, ra = Graph::handle(a), rb = Graph::handle(b),
                    ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    const double* up = ro->grad.data();
    if (ra->requires_grad) {
      // dA = dC * B^T
      ra->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* urow = up + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = rb->value.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += urow[j] * brow[j];
          ra->grad[i * k + p] += acc;
        }
      }
    }
    if (rb->requires_grad) {
      // dB = A^T * dC
      rb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* urow = up + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ra->value[i * k + p];
          if (aip == 0.0) continue;
          double* grow = rb->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += aip * urow[j];
        }
      }
    }
  });
  return result;
}

/// x[m x n] + bias[n] added to every row.
inline Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  detail::require_matrix(x, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) {
    throw std::invalid_argument("add_bias: bias length " + std::to_string(bias.size()) +
                                " does not match " + std::to_string(n) + " columns");
  }
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  Tensor result = g.result({m, n}, std::move(out), {x, bias}, "add_bias");
  g.record(result, [m, n, rx = Graph::handle(x), rb = Graph::handle(bias),
                    ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    if (rx->requires_grad) {
      rx->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) rx->grad[i] += ro->grad[i];
    }
    if (rb->requires_grad) {
      rb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) rb->grad[j] += ro->grad[i * n + j];
      }
    }
  });
  return result;
}

// -- activations ----------------------------------------------------------------

inline Tensor leaky_relu(Graph& g, const Tensor& x, double slope) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
  Tensor result = g.result(x.shape(), std::move(out), {x}, "leaky_relu");
  g.record(result, [slope, rx = Graph::handle(x), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rx->ensure_grad();
    for (std::size_t i = 0; i < ro->grad.size(); ++i) {
      rx->grad[i] += ro->grad[i] * (rx->value[i] > 0.0 ? 1.0 : slope);
    }
  });
  return result;
}

inline Tensor sigmoid(Graph& g, const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    // split on sign so exp never overflows
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tensor result = g.result(x.shape(), std::move(out), {x}, "sigmoid");
  g.record(result, [rx = Graph::handle(x), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rx->ensure_grad();
    for (std::size_t i = 0; i < ro->grad.size(); ++i) {
      const double s = ro->value[i];
      rx->grad[i] += ro->grad[i] * s * (1.0 - s);
    }
  });
  return result;
}

/// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(Graph& g, const Tensor& logits) {
  const std::size_t m = logits.rows(), n = logits.cols();
  detail::check_finite(logits.values(), "softmax_rows input");
  auto lv = logits.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = lv.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  Tensor result = g.result(logits.shape(), std::move(out), {logits}, "softmax_rows");
  g.record(result, [m, n, rl = Graph::handle(logits), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rl->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* s = ro->value.data() + i * n;
      const double* up = ro->grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += up[j] * s[j];
      for (std::size_t j = 0; j < n; ++j) rl->grad[i * n + j] += s[j] * (up[j] - dot);
    }
  });
  return result;
}

inline constexpr double kNormEpsilon = 1e-12;

/// Projects each row (or the single vector of a rank-1 tensor) onto the unit sphere.
inline Tensor l2_normalize(Graph& g, const Tensor& v) {
  if (v.rank() > 2) throw std::invalid_argument("l2_normalize expects a vector or matrix");
  const std::size_t m = v.rows(), n = v.cols();
  auto vv = v.values();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += vv[i * n + j] * vv[i * n + j];
    const double norm = std::sqrt(sq);
    if (!(norm > kNormEpsilon)) throw std::domain_error("l2_normalize: near-zero vector");
    norms[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vv[i * n + j] / norm;
  }
  Tensor result = g.result(v.shape(), std::move(out), {v}, "l2_normalize");
  g.record(result, [m, n, norms = std::move(norms), rv = Graph::handle(v),
                    ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rv->ensure_grad();
    // d(v/|v|) = (I - u u^T) / |v|
    for (std::size_t i = 0; i < m; ++i) {
      const double* u = ro->value.data() + i * n;
      const double* up = ro->grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += up[j] * u[j];
      for (std::size_t j = 0; j < n; ++j) {
        rv->grad[i * n + j] += (up[j] - dot * u[j]) / norms[i];
      }
    }
  });
  return result;
}

// -- reductions and reshaping ---------------------------------------------------

/// Sum of all entries, as a one-element tensor.
inline Tensor sum(Graph& g, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor result = g.result({1}, {total}, {x}, "sum");
  g.record(result, [rx = Graph::handle(x), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rx->ensure_grad();
    for (auto& gv : rx->grad) gv += ro->grad[0];
  });
  return result;
}

/// x[m x n] -> [m x 1] row sums.
inline Tensor row_sum(Graph& g, const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  auto xv = x.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i] += xv[i * n + j];
  }
  Tensor result = g.result({m, 1}, std::move(out), {x}, "row_sum");
  g.record(result, [m, n, rx = Graph::handle(x), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rx->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) rx->grad[i * n + j] += ro->grad[i];
    }
  });
  return result;
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(Graph& g, const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") of " + std::to_string(x.dim(0)));
  }
  const std::size_t n = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          xv.begin() + static_cast<std::ptrdiff_t>(end * n));
  Tensor result = g.result({end - begin, n}, std::move(out), {x}, "slice_rows");
  g.record(result, [offset = begin * n, rx = Graph::handle(x), ro = Graph::handle(result)] {
    if (ro->grad.empty()) return;
    rx->ensure_grad();
    for (std::size_t i = 0; i < ro->grad.size(); ++i) rx->grad[offset + i] += ro->grad[i];
  });
  return result;
}

// -- verification harness -------------------------------------------------------

/// Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12),
/// numeric being the fourth-order central difference with step h. `f` builds a
/// scalar from the given inputs on the graph it receives.
inline double grad_check(const std::function<Tensor(Graph&)>& f, std::span<Tensor> inputs,
                         double h = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor loss = f(g);
    g.backward(loss);
    for (auto& t : inputs) {
      analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                         : std::vector<double>(t.size(), 0.0));
    }
  }
  auto eval = [&] {
    Graph g(Graph::Mode::no_grad);
    return f(g).item();
  };
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double step) {
        values[i] = saved + step;
        return eval();
      };
      const double near = at(h) - at(-h);
      const double far = at(2.0 * h) - at(-2.0 * h);
      values[i] = saved;
      const double numeric = (8.0 * near - far) / (12.0 * h);
      const double a = analytic[t][i];
      worst = std::max(worst, std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12));
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return worst;
}

inline double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f, Tensor x,
                         double h = 1e-4) {
  x.set_requires_grad(true);
  std::vector<Tensor> inputs{x};
  return grad_check([&](Graph& g) { return f(g, inputs.front()); }, inputs, h);
}

}  // namespace ndgrad
}  // namespace salad
