#pragma once

#include <span>

#include "emovad/graph.hpp"

namespace emovad::grad {

// Differentiable primitives. Every op validates shapes and throws ShapeError
// naming the offending dims. Matrices are rank-2 row-major; vectors that take
// part in matrix products are passed as [1 x n] or [n x 1].

// [m x k] . [k x n] -> [m x n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// Cross-correlation over time with stride 1 and zero same-padding of (K-1)/2.
// x: [C_in x T], w: [C_out x C_in x K], bias: [C_out]  ->  [C_out x T]
// Even K raises ConfigError.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias);

// Max-subtracted softmax along `axis`.
template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis);

// slope in (0, 1); the derivative at exactly 0 takes the positive branch.
template <typename T>
Var<T> leaky_relu(Var<T> x, T slope);

template <typename T>
Var<T> relu(Var<T> x);

// Elementwise product. b either matches a, or is [rows x 1] and is broadcast
// across the columns of a 2-D a.
template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b);

// Temporal mean pooling of x: [C x T] -> [C x ((T - kernel) / stride + 1)].
// Frames not covered by a full window are dropped.
template <typename T>
Var<T> mean_pool(Var<T> x, std::size_t kernel, std::size_t stride);

// Mean over rows of -log(max(p[label], 1e-12)). probs is [C] (one label) or
// [rows x C] (one label per row). Returns a [1] tensor.
template <typename T>
Var<T> cross_entropy(Var<T> probs, std::span<const int> labels);

template <typename T>
Var<T> transpose(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Dims dims);

// x: [m x n] plus b: [n] added to every row.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b);

// Column j of x: [m x n] -> [m x 1].
template <typename T>
Var<T> column(Var<T> x, std::size_t j);

// Forward value is `hard`; the adjoint passes unchanged to `soft`.
template <typename T>
Var<T> straight_through(Var<T> soft, Tensor<T> hard);

// Sum of all entries -> [1].
template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> scale(Var<T> x, T factor);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace emovad::grad
