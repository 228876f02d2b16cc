#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace fbmfem {

/// The random source used everywhere. mt19937_64 has a standard-mandated output
/// sequence, so draws are bit-identical across standard libraries.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of the independent stream for sample `index` under `master`:
/// splitmix64(master XOR splitmix64(index + 0x632BE59BD9B4E019)).
/// A pure function of (master, index), so parallel Monte Carlo does not depend on
/// which thread draws which sample.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(master ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t index) {
    return Rng(stream_seed(master, index));
}

/// Uniform on the open interval (0, 1) from the top 53 bits.
inline double uniform_open01(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Fills `out` with independent N(0,1) draws using Box-Muller in pairs.
/// std::normal_distribution is avoided because its algorithm is implementation-defined.
inline void fill_standard_normals(Rng& rng, std::span<double> out) {
    std::size_t i = 0;
    while (i < out.size()) {
        const double u1 = uniform_open01(rng);
        const double u2 = uniform_open01(rng);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        out[i++] = r * std::cos(angle);
        if (i < out.size()) out[i++] = r * std::sin(angle);
    }
}

}  // namespace fbmfem
