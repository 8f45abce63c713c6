#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace emovad::check {

struct SuiteOptions {
  double tolerance = 1e-5;
  // Central-difference half-width. Small enough that ReLU kinks near the
  // evaluation point are rarely straddled at the 256-channel blocks.
  double step = 1e-6;
  std::uint64_t seed = 7;
  // Coordinates sampled per input tensor for the 256-channel blocks.
  std::size_t sampled_coords = 24;
  // Routes every loss through an identity whose backward scales the adjoint
  // by 1.5. Used to prove the harness catches a broken backward.
  bool inject_fault = false;
};

struct CheckOutcome {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst;
  bool passed = false;
};

// f64 finite-difference checks of every primitive, each block, and the full
// soft-mask pipeline loss.
std::vector<CheckOutcome> run_gradcheck_suite(const SuiteOptions& opts = {});

}  // namespace emovad::check
