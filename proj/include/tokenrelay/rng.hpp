#pragma once

// Seeded random source with implementation-pinned draw algorithms. The
// standard distributions are not bit-reproducible across library versions,
// so uniform/normal draws are generated here from raw mt19937_64 output.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace tokenrelay {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n). Rejection sampled, so unbiased for any n.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller. Two raw draws per sample, no cached
    /// spare, so the draw count per call is fixed.
    double normal() {
        const double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

  private:
    std::mt19937_64 eng_;
};

}  // namespace tokenrelay
