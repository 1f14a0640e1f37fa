#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace marginfer {

/// SplitMix64 pseudo-random generator (Vigna's 64-bit mixer with a Weyl
/// increment). Every random stream in the library comes from this generator
/// so that results are reproducible from the documented seeds alone:
///
///   state += 0x9E3779B97F4A7C15
///   z = state; z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
///   z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31
///
/// Uniform doubles take the top 53 bits; normals use Box-Muller on a pair
/// of uniforms (second value cached). Independent substreams are derived
/// from (seed, stream index) via one extra mixing round, which keeps e.g.
/// per-row simulation and per-walker proposal streams order-independent.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Substream generator for (seed, stream). Distinct streams are
    /// decorrelated by scrambling the stream index before combining.
    static Rng substream(std::uint64_t seed, std::uint64_t stream) {
        return Rng(seed ^ mix(stream + 0x632BE59BD9B4E019ULL));
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; the second value of each pair is
    /// cached, so draw order matters for reproducibility.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // u1 in (0, 1] so the log is finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(t);
        has_cached_ = true;
        return r * std::cos(t);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace marginfer
