#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "emovad/graph.hpp"

namespace emovad::grad {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of at most this many
  // coordinates per input tensor.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "input#<i>[<coord>]" of the worst coordinate
};

// Builds a scalar ([1]) loss on the given graph, binding the checked inputs
// with Graph::param. Must be deterministic.
using ScalarFn = std::function<Var<double>(Graph<double>&)>;

// Compares reverse-mode gradients against central differences. Per-coordinate
// error is |g_a - g_n| / max(1, |g_a|, |g_n|). Inputs get requires_grad set
// and their gradients overwritten; their data is restored bit-exactly.
GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor<double>* const> inputs,
                           const GradCheckOptions& opts = {});

}  // namespace emovad::grad
