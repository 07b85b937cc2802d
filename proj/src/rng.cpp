#include "nsfx/rng.hpp"

#include <cmath>
#include <numbers>

namespace nsfx {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t sm = seed ^ rotl(stream_id * 0xd1342543de82ef95ULL + 1, 17);
    return Rng(splitmix64(sm));
}

std::uint64_t Rng::next_u64() noexcept {
    ++consumed_;
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() noexcept {
    // 53 random bits mapped onto (0, 1]; zero is excluded so log() is safe.
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::abs_normal() noexcept { return std::fabs(normal()); }

std::uint64_t Rng::index(std::uint64_t n) noexcept {
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x < limit) return x % n;
    }
}

}  // namespace nsfx
