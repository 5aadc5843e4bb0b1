// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>

namespace treecell {

/// Seeded random source with implementation-independent draws.
///
/// std::uniform_*_distribution results differ between standard libraries, so
/// every draw here is derived directly from the raw 64-bit engine output. The
/// engine state can be saved to and restored from text for checkpointing.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    size_t index(size_t n)
    {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return static_cast<size_t>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call, second discarded).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    const T& pick(std::span<const T> items)
    {
        return items[index(items.size())];
    }

    /// Derive an independent child seed.
    uint64_t split() { return engine_() ^ 0x9e3779b97f4a7c15ULL; }

    std::string state() const
    {
        std::ostringstream out;
        out << engine_;
        return out.str();
    }

    void restore(const std::string& text)
    {
        std::istringstream in(text);
        in >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace treecell
