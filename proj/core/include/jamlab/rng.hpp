#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace jamlab {

// Finalizer of the splitmix64 generator: a bijective 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives an independent substream key from a root seed and up to three
// identifiers (class id, sweep index, sample index, ...). Streams with
// distinct identifiers never share outputs.
inline std::uint64_t derive_stream(std::uint64_t root, std::uint64_t a,
                                   std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = mix64(root + 0x9e3779b97f4a7c15ull);
    h = mix64(h ^ (a + 0xbf58476d1ce4e5b9ull));
    h = mix64(h ^ (b + 0x94d049bb133111ebull));
    h = mix64(h ^ (c + 0x2545f4914f6cdd1dull));
    return h;
}

// Portable counter-based generator (splitmix64). The state is a counter
// advanced by a fixed odd increment; every output is mix64 of the counter,
// so the sequence is reproducible across platforms and safe to fork into
// per-sample streams via derive_stream().
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix64(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [lo, hi] inclusive via the 128-bit multiply map.
    // Bias is O(range / 2^64), negligible for the ranges used here.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1u;
        const std::uint64_t r = next_u64();
        const auto wide = static_cast<unsigned __int128>(r) * range;
        return lo + static_cast<std::int64_t>(wide >> 64);
    }

    // Standard normal via Box-Muller; the second deviate of each pair is
    // cached, so a stream's outputs depend only on its seed.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Circularly-symmetric complex normal with total variance `var`
    // (var/2 in each of the real and imaginary parts).
    std::complex<double> cnormal(double var) {
        const double s = std::sqrt(var / 2.0);
        const double re = normal();
        const double im = normal();
        return {s * re, s * im};
    }

private:
    std::uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace jamlab
