#include "emovad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace emovad::grad {

namespace {

double evaluate(const ScalarFn& f) {
  Graph<double> g;
  auto out = f(g);
  if (out.value().size() != 1) throw ShapeError("grad_check function must return a scalar, got " +
                                                dims_to_string(out.dims()));
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor<double>* const> inputs,
                           const GradCheckOptions& opts) {
  for (auto* t : inputs) t->set_requires_grad(true);
  {
    Graph<double> g;
    auto out = f(g);
    if (out.value().size() != 1) throw ShapeError("grad_check function must return a scalar");
    g.backward(out);
  }

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& t = *inputs[i];
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_input > 0 && coords.size() > opts.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (auto c : coords) {
      const double original = t[c];
      t[c] = original + opts.step;
      const double up = evaluate(f);
      t[c] = original - opts.step;
      const double down = evaluate(f);
      t[c] = original;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = t.grad()[c];
      const double err = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error)
          result.worst = "input#" + std::to_string(i) + "[" + std::to_string(c) + "]";
      }
    }
  }
  return result;
}

}  // namespace emovad::grad
