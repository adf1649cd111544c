#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace hrt {

// Seeded generator with platform-independent real sampling (the standard
// distributions are implementation-defined, which breaks golden values).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // [0, n)
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace hrt
