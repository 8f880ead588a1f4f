#ifndef DCR_AUTODIFF_HPP
#define DCR_AUTODIFF_HPP

// Eager reverse-mode differentiation over dense 2-D tensors.
//
// A Graph is a tape: every node is appended at creation with its value
// already computed, so creation order is a topological order and backward()
// is a single reverse sweep. Vars are cheap handles (graph pointer + index).

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr::ad {

class Graph;

class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// Propagates the output gradient of node `self` into its parents.
  using BackwardFn = std::function<void(Graph& graph, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that receives no gradient.
  Var constant(Tensor value) { return leaf(std::move(value), false, "constant"); }

  /// Leaf whose gradient is reported by grad() after backward().
  Var parameter(Tensor value) { return leaf(std::move(value), true, "parameter"); }

  /// Appends an interior node. Used by the operation functions below.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> parents,
             BackwardFn backward) {
    bool requires_grad = false;
    for (std::size_t p : parents) requires_grad = requires_grad || nodes_[p].requires_grad;
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(parents),
                          requires_grad ? std::move(backward) : BackwardFn{},
                          std::string(op), requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  /// Accumulates d(root)/d(node) for every node reachable from `root`.
  ///
  /// Policy for repeated calls: every call first re-zeroes all gradients, so
  /// calling backward twice on the same root yields the same gradients rather
  /// than doubling them.
  void backward(Var root) {
    check_owned(root, "backward");
    const Node& r = nodes_[root.id()];
    if (r.value.shape() != Shape{1, 1}) {
      throw ShapeError("backward: root must be scalar (1x1), got " + r.value.shape().str());
    }
    if (!r.value.all_finite()) throw DomainError("backward: root value is not finite");

    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad = Tensor(n.value.rows(), n.value.cols());
      } else {
        n.grad = Tensor{};
      }
    }
    if (!r.requires_grad) return;
    nodes_[root.id()].grad(0, 0) = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  /// Gradient from the most recent backward(). Zero-filled for parameters the
  /// root does not depend on.
  const Tensor& grad(Var v) const {
    check_owned(v, "grad");
    const Node& n = nodes_[v.id()];
    if (!n.requires_grad) throw std::logic_error("grad: node does not require a gradient");
    if (n.grad.shape() != n.value.shape()) {
      throw std::logic_error("grad: backward() has not been called");
    }
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  std::size_t size() const { return nodes_.size(); }

  /// Mutable gradient slot for op implementations; only valid during backward.
  Tensor& grad_slot(std::size_t id) { return nodes_[id].grad; }

  void check_owned(Var v, std::string_view context) const {
    if (v.graph() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument(std::string(context) + ": variable belongs to another graph");
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::string op;
    bool requires_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad, std::string_view op) {
    if (!value.all_finite()) {
      throw DomainError(std::string(op) + ": non-finite value entering graph");
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, {}, {}, std::string(op), requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // deque: references from value() survive later appends
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Shape& Var::shape() const { return graph_->value(id_).shape(); }

namespace detail {

inline Graph& common_graph(Var a, Var b, std::string_view op) {
  if (!a.valid() || a.graph() != b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph();
}

[[noreturn]] inline void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Adds `delta` into the gradient of node `id` if it participates in backward.
inline void accumulate(Graph& g, std::size_t id, const Tensor& delta) {
  if (!g.requires_grad(id)) return;
  auto dst = g.grad_slot(id).values();
  auto src = delta.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Elementwise unary op whose local derivative depends on input and output.
template <typename Forward, typename Derivative>
Var unary(std::string_view op, Var a, Forward forward, Derivative derivative) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  const std::size_t pa = a.id();
  return g.record(op, std::move(out), {pa}, [pa, derivative](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& x_val = gr.value(pa);
    const Tensor& y_val = gr.value(self);
    const Tensor& up = gr.grad_slot(self);
    Tensor& dst = gr.grad_slot(pa);
    for (std::size_t i = 0; i < x_val.size(); ++i) dst[i] += up[i] * derivative(x_val[i], y_val[i]);
  });
}

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

// out(i,j) = sum_k a(k,i) * b(k,j)
inline Tensor transposed_matmul_values(const Tensor& a, const Tensor& b) {
  Tensor out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

// out(i,j) = sum_k a(i,k) * b(j,k)
inline Tensor matmul_transposed_values(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      out(i, j) = acc;
    }
  }
  return out;
}

// Same shape, or `b` is a 1 x cols row added to every row of `a`.
inline bool is_row_broadcast(const Shape& a, const Shape& b) {
  return b.rows == 1 && b.cols == a.cols && a.rows != 1;
}

template <int Sign>
Var add_or_sub(std::string_view op, Var a, Var b) {
  Graph& g = common_graph(a, b, op);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool broadcast = is_row_broadcast(x.shape(), y.shape());
  if (!broadcast && x.shape() != y.shape()) shape_mismatch(op, x.shape(), y.shape());
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) += Sign * y(broadcast ? 0 : r, c);
  }
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return g.record(op, std::move(out), {pa, pb}, [pa, pb, broadcast](Graph& gr, std::size_t self) {
    const Tensor& up = gr.grad_slot(self);
    accumulate(gr, pa, up);
    if (!gr.requires_grad(pb)) return;
    Tensor& dst = gr.grad_slot(pb);
    for (std::size_t r = 0; r < up.rows(); ++r) {
      for (std::size_t c = 0; c < up.cols(); ++c) dst(broadcast ? 0 : r, c) += Sign * up(r, c);
    }
  });
}

}  // namespace detail

/// (m x k) * (k x n) -> (m x n).
inline Var matmul(Var a, Var b) {
  Graph& g = detail::common_graph(a, b, "matmul");
  if (a.shape().cols != b.shape().rows) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return g.record("matmul", detail::matmul_values(a.value(), b.value()), {pa, pb},
                  [pa, pb](Graph& gr, std::size_t self) {
                    const Tensor& up = gr.grad_slot(self);
                    if (gr.requires_grad(pa)) {
                      detail::accumulate(gr, pa,
                                         detail::matmul_transposed_values(up, gr.value(pb)));
                    }
                    if (gr.requires_grad(pb)) {
                      detail::accumulate(gr, pb,
                                         detail::transposed_matmul_values(gr.value(pa), up));
                    }
                  });
}

/// Elementwise a + b; `b` may also be a 1 x cols row bias.
inline Var add(Var a, Var b) { return detail::add_or_sub<1>("add", a, b); }

/// Elementwise a - b; `b` may also be a 1 x cols row.
inline Var subtract(Var a, Var b) { return detail::add_or_sub<-1>("subtract", a, b); }

/// Elementwise (Hadamard) product of equally shaped operands.
inline Var multiply(Var a, Var b) {
  Graph& g = detail::common_graph(a, b, "multiply");
  if (a.shape() != b.shape()) detail::shape_mismatch("multiply", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t pa = a.id();
  const std::size_t pb = b.id();
  return g.record("multiply", std::move(out), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.grad_slot(self);
    if (gr.requires_grad(pa)) {
      Tensor& dst = gr.grad_slot(pa);
      const Tensor& other = gr.value(pb);
      for (std::size_t i = 0; i < up.size(); ++i) dst[i] += up[i] * other[i];
    }
    if (gr.requires_grad(pb)) {
      Tensor& dst = gr.grad_slot(pb);
      const Tensor& other = gr.value(pa);
      for (std::size_t i = 0; i < up.size(); ++i) dst[i] += up[i] * other[i];
    }
  });
}

inline Var scale(Var a, double factor) {
  return detail::unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

inline Var add_scalar(Var a, double offset) {
  return detail::unary(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

inline Var negate(Var a) { return scale(a, -1.0); }

inline Var square(Var a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Subgradient at 0 is 0.
inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// [x]_+ as used by margin ranking losses. Subgradient at exactly 0 is 0.
inline Var hinge_clamp(Var a) {
  return detail::unary(
      "hinge_clamp", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

/// Natural log; throws DomainError on any non-positive entry.
inline Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sum(Var a) {
  Graph& g = *a.graph();
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t pa = a.id();
  return g.record("sum", Tensor(1, 1, acc), {pa}, [pa](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(pa)) return;
    const double up = gr.grad_slot(self).item();
    for (double& d : gr.grad_slot(pa).values()) d += up;
  });
}

inline Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

inline Var transpose(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor out(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
  }
  const std::size_t pa = a.id();
  return g.record("transpose", std::move(out), {pa}, [pa](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& up = gr.grad_slot(self);
    Tensor& dst = gr.grad_slot(pa);
    for (std::size_t r = 0; r < dst.rows(); ++r) {
      for (std::size_t c = 0; c < dst.cols(); ++c) dst(r, c) += up(c, r);
    }
  });
}

/// Row-wise softmax, max-shifted for stability.
inline Var softmax_rows(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double peak = x(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) peak = std::max(peak, x(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp(x(r, c) - peak);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= total;
  }
  const std::size_t pa = a.id();
  return g.record("softmax_rows", std::move(out), {pa}, [pa](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& y = gr.value(self);
    const Tensor& up = gr.grad_slot(self);
    Tensor& dst = gr.grad_slot(pa);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += up(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dst(r, c) += y(r, c) * (up(r, c) - dot);
    }
  });
}

/// Identity on the forward pass; multiplies the incoming gradient by
/// -factor on the way back.
inline Var gradient_reversal(Var a, double factor = 1.0) {
  Graph& g = *a.graph();
  const std::size_t pa = a.id();
  return g.record("gradient_reversal", a.value(), {pa}, [pa, factor](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& up = gr.grad_slot(self);
    Tensor& dst = gr.grad_slot(pa);
    for (std::size_t i = 0; i < up.size(); ++i) dst[i] -= factor * up[i];
  });
}

/// Copies the value into a new constant leaf, cutting the gradient path.
inline Var detach(Var a) { return a.graph()->constant(a.value()); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return subtract(a, b); }
inline Var operator-(Var a) { return negate(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace dcr::ad

#endif  // DCR_AUTODIFF_HPP
