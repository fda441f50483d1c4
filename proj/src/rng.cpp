#include "retc/rng.hpp"

#include <cmath>

namespace retc {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

Real Rng::uniform01() {
    return static_cast<Real>(next_u64() >> 11) * 0x1.0p-53;
}

Real Rng::uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform01(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    RETC_CHECK(n > 0, ErrorKind::Usage, "uniform_int: n must be positive");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

Real Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    Real u1 = uniform01();
    Real u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const Real r = std::sqrt(-2.0 * std::log(u1));
    const Real a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

Real Rng::truncated_normal(Real stddev) {
    for (;;) {
        const Real x = normal() * stddev;
        if (std::abs(x) <= 2.0 * stddev) return x;
    }
}

Rng make_rng(std::uint64_t seed, std::string_view name, std::uint64_t a,
             std::uint64_t b) {
    std::uint64_t h = fnv1a64(name.data(), name.size());
    std::uint64_t state = seed ^ (h * 0x9e3779b97f4a7c15ULL);
    state ^= a * 0xff51afd7ed558ccdULL;
    state ^= b * 0xc4ceb9fe1a85ec53ULL;
    // One warm-up round decorrelates nearby seeds.
    splitmix64(state);
    return Rng(state);
}

}  // namespace retc
