#pragma once

#include <cstdint>

namespace nsfx {

/// Deterministic xoshiro256** generator seeded through SplitMix64.
///
/// Every output is a pure function of the seed and the number of raw words
/// consumed, so sequences are identical across runs and platforms.
///
/// Draw accounting (one raw word = one call to next_u64):
///   uniform()     1 word, value in (0, 1]
///   normal()      2 words, Box-Muller cosine branch, no caching
///   abs_normal()  2 words, |normal()|
///   index(n)      1 word per attempt (rejection sampling, usually 1)
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    /// Independent stream derived from (seed, stream_id).
    static Rng substream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;
    double normal() noexcept;
    double abs_normal() noexcept;
    /// Unbiased integer in [0, n). n must be positive.
    std::uint64_t index(std::uint64_t n) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t words_consumed() const noexcept { return consumed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    std::uint64_t consumed_ = 0;
};

/// Stream ids used by the training loop. Keeping them separate means the
/// noise variant never changes initialisation or batch order.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t subset = 4;
}  // namespace streams

}  // namespace nsfx
