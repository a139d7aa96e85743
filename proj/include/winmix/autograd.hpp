#pragma once

#include <winmix/tensor.hpp>

#include <functional>
#include <span>
#include <vector>

namespace winmix {

template <typename T> class Graph;

/// Handle to a node recorded on a Graph.
template <typename T> struct Var {
  Graph<T> *graph = nullptr;
  std::size_t id = 0;

  const Tensor<T> &value() const;
  const Shape &shape() const { return value().shape(); }
};

/// Leaf gradients produced by Graph::backward.
template <typename T> class Gradients {
public:
  /// Gradient of a leaf; throws if `leaf` is not a leaf of the graph that
  /// produced these gradients.
  const Tensor<T> &of(const Var<T> &leaf) const;

private:
  friend class Graph<T>;
  const Graph<T> *graph_ = nullptr;
  std::vector<Tensor<T>> grads_;
  std::vector<bool> is_leaf_;
};

/// Tape for reverse-mode differentiation. Nodes are appended in execution
/// order, so the tape itself is a topological order and backward walks it in
/// reverse. One Graph per forward pass; not shared between threads.
template <typename T> class Graph {
public:
  /// Receives the node's output gradient and one slot per input; slots are
  /// null for inputs that need no gradient, otherwise pre-sized zero tensors
  /// to accumulate into.
  using BackwardFn = std::function<void(const Tensor<T> &grad_out, std::span<Tensor<T> *> grad_in)>;

  Graph() = default;
  Graph(const Graph &) = delete;
  Graph &operator=(const Graph &) = delete;

  Var<T> leaf(Tensor<T> value);
  Var<T> constant(Tensor<T> value);

  Var<T> record(const char *op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward);

  const Tensor<T> &value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var<T> &v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Gradients<T> backward(const Var<T> &loss);

private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
};

template <typename T> const Tensor<T> &Var<T>::value() const { return graph->value(id); }

// Differentiable ops. Semantics follow the eager kernels in tensor.hpp.

template <typename T> Var<T> matmul(const Var<T> &a, const Var<T> &b);
/// x @ w^T + bias for w of shape [out, in]; `bias` may be empty.
template <typename T> Var<T> linear(const Var<T> &x, const Var<T> &w, const Var<T> *bias);
template <typename T> Var<T> transpose_last2(const Var<T> &a);
template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> mul(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> scale(const Var<T> &a, T factor);
template <typename T> Var<T> add_broadcast(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> broadcast_to(const Var<T> &a, const Shape &shape);
template <typename T> Var<T> reshape(const Var<T> &a, Shape shape);
template <typename T> Var<T> gather(const Var<T> &a, IndexMapPtr map);
template <typename T> Var<T> concat(const Var<T> &a, const Var<T> &b, std::size_t axis);
template <typename T> Var<T> slice(const Var<T> &a, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Var<T> mean_axis(const Var<T> &a, std::size_t axis);
template <typename T> Var<T> sum(const Var<T> &a);
template <typename T> Var<T> softmax_last_axis(const Var<T> &x);
template <typename T> Var<T> gelu(const Var<T> &x);
template <typename T> Var<T> layer_norm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta, T eps);
template <typename T> Var<T> cross_entropy(const Var<T> &logits, std::vector<int> labels, T smoothing);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T> &)> &f, const Tensor<T> &x, T h);

} // namespace winmix
