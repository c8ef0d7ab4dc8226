// rng.hpp - part of dtreg. Deterministic splitmix64 generator; identical streams on every platform.
#pragma once

#include <cstdint>

namespace dtreg {

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Symmetric uniform in [-a, a).
    double symmetric(double a) { return uniform(-a, a); }

  private:
    uint64_t state_;
};

}  // namespace dtreg
