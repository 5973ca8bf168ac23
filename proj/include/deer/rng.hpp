#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace deer {

// Self-contained PRNG so that sampled configurations are reproducible
// bit-for-bit across compilers and standard libraries (std:: distributions
// are implementation-defined). SplitMix64 seeds Xoshiro256++, both public
// domain algorithms by Blackman & Vigna.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Deterministic child seed for realization `index` under `master`.
/// Realizations may therefore be evaluated concurrently and in any order.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master + 0x9E3779B97F4A7C15ull * (index + 1);
    return splitmix64(s);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& word : state_) word = splitmix64(s);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (no rejection, fixed draw count).
    double normal() {
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Standard Cauchy deviate; scale by fwhm/2 for a Lorentzian line.
    double cauchy() {
        return std::tan(std::numbers::pi * (uniform01() - 0.5));
    }

    /// Poisson count by accumulating exponential gaps until they exceed the
    /// mean. O(mean) work but immune to the exp(-mean) underflow of the
    /// multiplicative method, so large means are fine.
    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        std::uint64_t count = 0;
        double sum = 0.0;
        while (true) {
            sum += -std::log(1.0 - uniform01());
            if (sum > mean) return count;
            ++count;
        }
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

}  // namespace deer
