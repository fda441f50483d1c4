#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "retc/common.hpp"

namespace retc {

// Deterministic counter-based generator (splitmix64 over a mixed seed).
// Every random draw in the project flows from a single user seed through
// named streams, so components (palette, masks, init, sampling) stay
// independently reproducible and training can resume at any step without
// serializing engine state.
class Rng {
public:
    explicit Rng(std::uint64_t state) : state_(state) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    Real uniform01();

    // Uniform in [lo, hi).
    Real uniform(Real lo, Real hi);

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller.
    Real normal();

    // Normal(0, std) resampled until |x| <= 2*std.
    Real truncated_normal(Real stddev);

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    Real spare_ = 0.0;
};

// Derives an independent stream from (seed, name, a, b).
Rng make_rng(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
             std::uint64_t b = 0);

// FNV-1a over arbitrary bytes; used for stream naming and content hashes.
std::uint64_t fnv1a64(const void* data, std::size_t len);

}  // namespace retc
