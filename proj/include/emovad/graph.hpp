#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "emovad/tensor.hpp"

namespace emovad::grad {

template <typename T>
class Graph;

// Lightweight handle to a node of a Graph. Valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Dims& dims() const { return value().dims(); }
  bool needs_grad() const { return graph->needs_grad(*this); }
};

// Tape of primitive applications. Nodes are appended in evaluation order, so
// every node's inputs precede it and reverse iteration is a valid adjoint
// schedule. A graph is single-use per forward pass and owned by one thread.
template <typename T>
class Graph {
 public:
  // Propagates the adjoint of the node being processed into its inputs.
  using BackwardFn = std::function<void(Graph&, std::span<const T> out_adjoint)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf bound to an external tensor. Its value is copied now; on backward the
  // adjoint is added into tensor.grad() when tensor.requires_grad() is set.
  Var<T> param(Tensor<T>& tensor);
  // Leaf that never receives gradient.
  Var<T> constant(Tensor<T> value);

  // Appends an op result. needs_grad is derived from the inputs.
  Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var<T> v) const { return nodes_.at(v.id).needs_grad; }

  // Adjoint buffer of a node, zero-allocated on first access. Only valid
  // during backward().
  std::span<T> adjoint(Var<T> v);
  // Adjoint computed by the last backward(); empty if the node was unreached.
  std::span<const T> last_adjoint(Var<T> v) const { return nodes_.at(v.id).adjoint; }

  // Reverse sweep from root with every root entry seeded to `seed`. Node
  // adjoints are recomputed from scratch on each call, while bound parameter
  // gradients accumulate.
  void backward(Var<T> root, T seed = T(1));

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Buffer<T> adjoint;
    bool needs_grad = false;
    Tensor<T>* bound = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable element addresses across appends
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace emovad::grad
