#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace cclip {

// PCG64 (XSL RR 128/64, setseq variant) after the pcg_variants.h reference.
// Splits, batch shuffles, and parameter init all draw from this generator so
// runs are reproducible across implementations. Stream assignments:
//   kStreamSplit      dataset split shuffle
//   kStreamInit       model parameter initialization
//   kStreamBatchBase  + epoch: per-epoch batch shuffle
//   kStreamSynthetic  synthetic dataset generation
class Pcg64 {
public:
    using u128 = unsigned __int128;

    explicit Pcg64(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0;
        inc_ = (u128(stream) << 1u) | 1u;
        step();
        state_ += seed;
        step();
    }

    std::uint64_t next_u64() {
        step();
        auto xored = static_cast<std::uint64_t>((state_ >> 64) ^ state_);
        auto rot = static_cast<unsigned>(state_ >> 122);
        return (xored >> rot) | (xored << ((-rot) & 63u));
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Unbiased uniform in [0, bound) via threshold rejection.
    std::uint64_t bounded(std::uint64_t bound) {
        const std::uint64_t threshold = (-bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) {
                return r % bound;
            }
        }
    }

    // Standard normal via Box-Muller; consumes two uniforms per draw.
    double next_normal() {
        const double u1 = 1.0 - next_double(); // (0, 1]
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    void step() { state_ = state_ * kMultiplier + inc_; }

    static constexpr u128 kMultiplier =
        (u128(2549297995355413924ULL) << 64) | 4865540595714422341ULL;

    u128 state_ = 0;
    u128 inc_ = 0;
};

inline constexpr std::uint64_t kStreamSplit = 1;
inline constexpr std::uint64_t kStreamInit = 2;
inline constexpr std::uint64_t kStreamBatchBase = 1000;
inline constexpr std::uint64_t kStreamSynthetic = 7;

// Seeded Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& values, Pcg64& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(values[i - 1], values[j]);
    }
}

} // namespace cclip
