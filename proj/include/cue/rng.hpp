#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cue {

/// SplitMix64: state advances by the golden-ratio increment 0x9E3779B97F4A7C15,
/// output is the state passed through the mix
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z =  z ^ (z >> 31)
/// Uniform doubles take the top 53 bits. Gaussians use Box-Muller on two
/// uniforms (u1 in (0,1], u2 in [0,1)) and hand out the cosine branch first,
/// then the cached sine branch.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    /// Independent stream `index` derived from `seed`.
    static SplitMix64 stream(std::uint64_t seed, std::uint64_t index) noexcept {
        return SplitMix64(mix(seed ^ mix(index + 0xD1B54A32D192ED03ULL)));
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Plain modulo; the bias is irrelevant at our sizes
    /// and keeps the algorithm trivially portable.
    std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

    double gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace cue
