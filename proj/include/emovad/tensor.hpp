#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "emovad/error.hpp"

namespace emovad::grad {

using Dims = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 3;

// Eigen picks its vector peeling from the buffer address, so float sums can
// differ in the last bit between two allocations. Fixed alignment keeps runs
// (and resumed runs) bit-reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

std::size_t numel(const Dims& dims);
std::string dims_to_string(const Dims& dims);

// Dense row-major array of rank 1..3. The gradient accumulator exists only
// while requires_grad is set.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, T fill = T(0));
  Tensor(Dims dims, Buffer<T> data);
  Tensor(Dims dims, std::initializer_list<T> data) : Tensor(std::move(dims), Buffer<T>(data)) {}
  Tensor(Dims dims, const std::vector<T>& data) : Tensor(std::move(dims), Buffer<T>(data.begin(), data.end())) {}

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  bool requires_grad() const { return requires_grad_; }
  // Turning the flag on allocates a zeroed accumulator; turning it off drops it.
  void set_requires_grad(bool on);
  bool has_grad() const { return requires_grad_; }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  void zero_grad();

  // Same dims and bit-identical data; grad state is not compared.
  bool same_data(const Tensor& other) const;
  bool all_finite() const;

  void reshape(Dims dims);

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    out.set_requires_grad(requires_grad_);
    return out;
  }

 private:
  Dims dims_;
  Buffer<T> data_;
  bool requires_grad_ = false;
  Buffer<T> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace emovad::grad
