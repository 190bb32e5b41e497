#pragma once

// Seedable, splittable random streams.
//
// Algorithm: a std::mt19937_64 engine per stream, seeded through SplitMix64 so that
// stream k of seed s is independent of stream k+1. Uniform doubles take the top 53
// bits; normal variates use the Box-Muller transform and consume two uniforms per
// pair. Given the engine, the output sequence is fixed by the C++ standard.

#include <cstdint>
#include <random>

namespace qqm {

/// One SplitMix64 step on `state`.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for sub-stream `stream` of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Independent child stream.
    Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// [0, 1)
    double uniform();
    /// (0, 1), never hits either end
    double uniform_open();
    /// [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Latent variable on the open interval (-1, 1).
    double latent() { return 2.0 * uniform_open() - 1.0; }
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform index in [0, n).
    std::size_t index(std::size_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace qqm
