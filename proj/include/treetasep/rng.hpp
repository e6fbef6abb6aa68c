#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace treetasep {

// splitmix64 finalizer, used both as a hash and as the stream step.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b + kGolden));
}

// Seed of replica `index` under base seed `base`. Documented in README so that
// external tools can reproduce any single replica.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return hash_combine(base, index);
}

// SplitMix64: 64 bits of state, so it can be stored per edge or per particle.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit constexpr Rng(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() {
        state_ += kGolden;
        return mix64(state_);
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Exponential(1).
    double exponential() { return -std::log1p(-uniform()); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace treetasep
