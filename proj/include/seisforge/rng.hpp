#pragma once

#include <cmath>
#include <cstdint>

namespace seisforge {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Counter-based 64-bit generator (SplitMix64). The integer stream is exact
/// on every platform: output i is mix64(seed + (i+1)*golden_gamma), so the
/// state is just a counter and streams can be forked by reseeding.
/// Uniform doubles use only the top 53 bits and IEEE arithmetic.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Unbiased integer in [0, n) via 128-bit multiply (Lemire, no modulo bias
    /// for our n << 2^64 use).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    /// Inclusive integer range.
    std::int64_t between(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller; consumes exactly two outputs per call.
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_;
};

/// Independent stream for (root seed, stream id): used to give every dataset
/// sample / candidate its own generator so parallel evaluation order cannot
/// change the draws.
inline SplitMix64 substream(std::uint64_t root_seed, std::uint64_t stream_id) {
    return SplitMix64(mix64(root_seed ^ mix64(stream_id + 0x632BE59BD9B4E019ull)));
}

} // namespace seisforge
