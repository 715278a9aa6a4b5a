#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace fedskd {

// Counter-based generator. Output i of the stream with key k is
//   mix64(k + (i + 1) * 0x9E3779B97F4A7C15)
// where mix64 is the SplitMix64 finalizer. This is exactly SplitMix64 seeded
// with k, so any draw can be reproduced from (key, counter) alone. The
// distributions below are part of the documented recipe; tests/oracles/*.py
// reimplements them bit for bit.
class CounterRng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();

    // (u >> 11) * 2^-53, in [0, 1).
    double uniform();
    // Rejection sampling: draw u until u < 2^64 - (2^64 mod n), return u mod n.
    std::uint64_t uniform_below(std::uint64_t n);
    // Box-Muller cosine branch: u1 = 1 - uniform(), u2 = uniform(),
    // z = sqrt(-2 ln u1) * cos(2 pi u2). Consumes two draws.
    double normal();
    // Marsaglia-Tsang; shape < 1 uses gamma(shape + 1) * U^(1/shape), with the
    // boosted draw taken first.
    double gamma(double shape);
    // Independent gamma(alpha) per component, normalized by their sum.
    std::vector<double> dirichlet(double alpha, std::size_t k);

    // Fisher-Yates, i from n-1 down to 1, j = uniform_below(i + 1).
    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i-- > 1;) {
            const auto j = static_cast<std::size_t>(uniform_below(i + 1));
            std::swap(items[i], items[j]);
        }
    }
    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

// Purpose domains for seed fan-out. Values are part of the documented
// derivation and must never be renumbered.
enum class SeedPurpose : std::uint64_t {
    schedule = 1,
    model_init = 2,
    data = 3,
    minibatch = 4,
    partition = 5,
    split = 6,
};

// derive_seed(parent, purpose, index) =
//   mix64(mix64(parent ^ (purpose * kGolden)) + (index + 1) * kGolden)
std::uint64_t derive_seed(std::uint64_t parent, SeedPurpose purpose, std::uint64_t index = 0);

}  // namespace fedskd
