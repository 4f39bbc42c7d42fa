#pragma once

// Seeded random numbers with a fixed bit-level recipe. The standard
// distributions are implementation-defined, so uniform and normal draws are
// built here directly on mt19937_64 output.

#include <cmath>
#include <cstdint>
#include <random>

namespace mbe {

// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::uint64_t bits) { return double(bits >> 11) * 0x1.0p-53; }

// splitmix64 finalizer; gives independent streams from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return unit_uniform(eng_()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        spare_ = rad * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return rad * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t bits() { return eng_(); }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mbe
