#ifndef ADDLAB_RNG_HPP
#define ADDLAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace addlab {

// SplitMix64 (Steele/Lea/Flood). Tiny, portable and bit-reproducible across
// platforms, which is what seed determinism contracts are pinned to.
inline constexpr std::uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// The k-th output (k = 0, 1, ...) of a SplitMix64 stream seeded with `seed`.
/// Used to derive independent seed lanes (per-trial seeds, init vs shuffle).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
    return splitmix64_mix(seed + (k + 1) * kSplitMixGamma);
}

class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += kSplitMixGamma;
        return splitmix64_mix(state_);
    }

    /// Uniform integer in [0, bound). Lemire multiply-shift; bound > 0.
    std::uint64_t below(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
    }

    /// Uniform double in [0, 1).
    double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool coin() { return (next_u64() >> 63) != 0; }

    /// Standard normal via Box-Muller (cosine branch).
    double gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Moves a uniformly chosen k-subset of v to the front (partial
    /// Fisher-Yates). The first k slots are the sample.
    template <typename T>
    void choose_prefix(std::vector<T>& v, std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(below(v.size() - i));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace addlab

#endif
