#include "emovad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace emovad::grad {

std::size_t numel(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

namespace {
void validate_dims(const Dims& dims) {
  if (dims.empty() || dims.size() > kMaxRank)
    throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                     std::to_string(dims.size()));
  for (auto d : dims)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Dims dims, T fill) : dims_(std::move(dims)) {
  validate_dims(dims_);
  data_.assign(numel(dims_), fill);
}

template <typename T>
Tensor<T>::Tensor(Dims dims, Buffer<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
  validate_dims(dims_);
  if (data_.size() != numel(dims_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match dims " + dims_to_string(dims_));
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on)
    grad_.assign(data_.size(), T(0));
  else
    grad_.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
bool Tensor<T>::same_data(const Tensor& other) const {
  return dims_ == other.dims_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (auto v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void Tensor<T>::reshape(Dims dims) {
  validate_dims(dims);
  if (numel(dims) != data_.size())
    throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
  dims_ = std::move(dims);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace emovad::grad
