#pragma once

#if defined(__SSE__) || defined(__x86_64__)
#include <xmmintrin.h>
#define EMOVAD_HAS_MXCSR 1
#endif

namespace emovad {

// Flushes subnormal floats to zero for the current thread while alive.
// Saturated soft masks otherwise push whole activations into the subnormal
// range, which costs an order of magnitude in speed on x86.
class DenormalGuard {
 public:
  DenormalGuard() {
#ifdef EMOVAD_HAS_MXCSR
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);  // FTZ | DAZ
#endif
  }
  ~DenormalGuard() {
#ifdef EMOVAD_HAS_MXCSR
    _mm_setcsr(saved_);
#endif
  }
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace emovad
