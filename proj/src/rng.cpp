#include "fedskd/rng.hpp"

#include <cmath>
#include <numbers>

namespace fedskd {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t CounterRng::next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
}

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::uniform_below(std::uint64_t n) {
    if (n <= 1) return 0;
    // 2^64 mod n computed without overflow.
    const std::uint64_t rem = (0 - n) % n;
    const std::uint64_t limit = 0 - rem;  // 2^64 - rem, wraps to 0 when rem == 0
    for (;;) {
        const std::uint64_t u = next_u64();
        if (rem == 0 || u < limit) return u % n;
    }
}

double CounterRng::normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::gamma(double shape) {
    if (shape < 1.0) {
        const double boosted = gamma(shape + 1.0);
        const double u = uniform();
        return boosted * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> CounterRng::dirichlet(double alpha, std::size_t k) {
    std::vector<double> p(k);
    double total = 0.0;
    for (auto& v : p) {
        v = gamma(alpha);
        total += v;
    }
    if (total > 0.0) {
        for (auto& v : p) v /= total;
    }
    return p;
}

std::uint64_t derive_seed(std::uint64_t parent, SeedPurpose purpose, std::uint64_t index) {
    const auto tag = static_cast<std::uint64_t>(purpose);
    return mix64(mix64(parent ^ (tag * CounterRng::kGolden)) + (index + 1) * CounterRng::kGolden);
}

}  // namespace fedskd
