#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so cells can be filled in any order or in
// parallel and still reproduce the same field bit for bit.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace hcg {

/// Name recorded in field tags so snapshots document the generator.
inline constexpr const char* kRngName = "splitmix64-ctr";

constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class CounterRng {
public:
    constexpr CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL)))
    {
    }

    constexpr std::uint64_t bits(std::uint64_t counter) const
    {
        return splitmix64(key_ ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform(std::uint64_t counter) const
    {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    /// Uniform on (0, 1].
    double uniform_open0(std::uint64_t counter) const
    {
        return (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters (2c, 2c+1).
    double normal(std::uint64_t counter) const
    {
        const double u1 = uniform_open0(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Poisson(mean) by sequential inversion, consuming one uniform.
    /// Intended for small means (per-cell intensities).
    std::uint64_t poisson(double mean, std::uint64_t counter) const
    {
        if (mean <= 0.0) {
            return 0;
        }
        const double u = uniform(counter);
        double p = std::exp(-mean);
        double cdf = p;
        std::uint64_t n = 0;
        while (u >= cdf && n < 100000) {
            ++n;
            p *= mean / static_cast<double>(n);
            cdf += p;
            if (p == 0.0) {
                break;
            }
        }
        return n;
    }

private:
    std::uint64_t key_;
};

}  // namespace hcg
