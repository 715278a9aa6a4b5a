#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedskd/rng.hpp"

using namespace fedskd;

// Golden values come from tests/oracles/rng_oracle.py.

TEST(CounterRng, MatchesPublishedSplitMix64Output) {
    CounterRng r(0);
    EXPECT_EQ(r.next_u64(), 0xE220A8397B1DCDAFULL);
}

TEST(CounterRng, OracleStream) {
    CounterRng r(7);
    EXPECT_EQ(r.next_u64(), 7191089600892374487ULL);
    EXPECT_EQ(r.next_u64(), 309689372594955804ULL);
    EXPECT_EQ(r.next_u64(), 16616101746815609346ULL);
    EXPECT_EQ(r.counter(), 3u);
}

TEST(CounterRng, OracleDistributions) {
    CounterRng r(123);
    EXPECT_EQ(r.uniform(), 0.7064912217637067);
    EXPECT_NEAR(r.normal(), 1.7423070317180693, 1e-15);
    EXPECT_NEAR(r.gamma(0.5), 0.6342661800713953, 1e-14);
    EXPECT_NEAR(r.gamma(2.5), 1.1530784530034333, 1e-14);

    CounterRng b(5);
    const std::vector<std::uint64_t> expected{3, 5, 2, 2, 3, 0};
    for (auto e : expected) EXPECT_EQ(b.uniform_below(7), e);
}

TEST(DeriveSeed, OracleValue) { EXPECT_EQ(derive_seed(42, SeedPurpose::data, 3), 7733288377993366868ULL); }

TEST(DeriveSeed, PurposesAndIndicesAreSeparated) {
    std::set<std::uint64_t> seen;
    for (auto p : {SeedPurpose::schedule, SeedPurpose::model_init, SeedPurpose::data, SeedPurpose::minibatch,
                   SeedPurpose::partition, SeedPurpose::split}) {
        for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(9, p, i));
    }
    EXPECT_EQ(seen.size(), 300u);
}

TEST(CounterRng, UniformRangeAndMean) {
    CounterRng r(1);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(CounterRng, UniformBelowStaysInRange) {
    CounterRng r(2);
    for (std::uint64_t n : {1ULL, 2ULL, 3ULL, 10ULL, 1000003ULL}) {
        for (int i = 0; i < 200; ++i) ASSERT_LT(r.uniform_below(n), n);
    }
}

TEST(CounterRng, GammaMeanMatchesShape) {
    for (double shape : {0.3, 1.0, 4.0}) {
        CounterRng r(3);
        double sum = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) sum += r.gamma(shape);
        EXPECT_NEAR(sum / n, shape, 0.05 * std::max(shape, 1.0)) << "shape " << shape;
    }
}

TEST(CounterRng, DirichletOnSimplex) {
    CounterRng r(4);
    for (double alpha : {0.1, 0.5, 10.0}) {
        const auto p = r.dirichlet(alpha, 5);
        ASSERT_EQ(p.size(), 5u);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        for (double v : p) EXPECT_GE(v, 0.0);
    }
}

TEST(CounterRng, ShuffleIsPermutationAndDeterministic) {
    std::vector<int> a(20), b(20);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    CounterRng r1(11), r2(11);
    r1.shuffle(a);
    r2.shuffle(b);
    EXPECT_EQ(a, b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 20; ++i) EXPECT_EQ(sorted[i], i);
}
