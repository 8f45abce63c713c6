#include "emovad/graph.hpp"

namespace emovad::grad {

template <typename T>
Var<T> Graph<T>::param(Tensor<T>& tensor) {
  Node n;
  n.value = Tensor<T>(tensor.dims(), tensor.storage());
  n.needs_grad = tensor.requires_grad();
  n.bound = n.needs_grad ? &tensor : nullptr;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.graph != this) throw ShapeError("op input belongs to a different graph");
    n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
std::span<T> Graph<T>::adjoint(Var<T> v) {
  auto& n = nodes_.at(v.id);
  if (n.adjoint.empty()) n.adjoint.assign(n.value.size(), T(0));
  return n.adjoint;
}

template <typename T>
void Graph<T>::backward(Var<T> root, T seed) {
  for (auto& n : nodes_) n.adjoint.clear();
  if (!nodes_.at(root.id).needs_grad) return;
  auto& r = nodes_[root.id];
  r.adjoint.assign(r.value.size(), seed);
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.adjoint.empty()) continue;
    if (n.bound) {
      auto g = n.bound->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.adjoint[k];
    } else if (n.backward) {
      n.backward(*this, n.adjoint);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace emovad::grad
