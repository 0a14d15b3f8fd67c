#pragma once

#include <cstdint>
#include <string_view>

namespace gridse {

/// FNV-1a 64-bit hash, used for seed-stream derivation and config hashing.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Deterministic pseudo-random stream (xoshiro256** core, splitmix64 seeding).
///
/// All randomness in the project flows through this class so that results
/// are bit-reproducible across platforms and standard-library versions.
/// Independent sub-streams are derived with derive(), never by sharing one
/// generator between stages.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next_u64() noexcept;

    /// Uniform in [0, 1).
    double uniform() noexcept;
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) noexcept;
    /// Uniform integer in [lo, hi] inclusive. Requires lo <= hi.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
    /// Standard normal via Box-Muller (second value cached).
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept;
    /// Bernoulli draw with probability p of true.
    bool bernoulli(double p) noexcept;

    /// Independent child stream identified by a label.
    Rng derive(std::string_view label) const noexcept;
    /// Independent child stream identified by an index.
    Rng derive(std::uint64_t index) const noexcept;

    std::uint64_t seed() const noexcept { return seed_; }

    /// Fisher-Yates shuffle.
    template <typename Container>
    void shuffle(Container& c) noexcept {
        if (c.size() < 2) return;
        for (std::size_t i = c.size() - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i)));
            using std::swap;
            swap(c[i], c[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace gridse
