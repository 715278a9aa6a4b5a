#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fedskd/errors.hpp"
#include "fedskd/metrics.hpp"
#include "fedskd/rng.hpp"

using namespace fedskd;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y, int positive = 1) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != positive) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] == positive) continue;
            pairs += 1.0;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

std::vector<double> column(const Tensor& scores, std::size_t col) {
    const std::size_t n = scores.dim(0), c = scores.rank() == 1 ? 1 : scores.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = scores[i * c + col];
    return out;
}

std::vector<LabeledDataset> small_task(std::uint64_t seed, std::size_t per_client = 24) {
    SyntheticTaskSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.samples_per_client = per_client;
    spec.seed = seed;
    return make_synthetic_task(spec);
}

std::vector<Model> small_models(std::size_t n) {
    ModelSpec s;
    s.base_width = 4;
    s.input_shape = {1, 8, 8};
    std::vector<Model> models;
    for (std::size_t i = 0; i < n; ++i) models.push_back(build_model(s, 100 + i));
    return models;
}

}  // namespace

TEST(Auc, SpecExamples) {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_EQ(auc(s, y), 0.75);
    const std::vector<double> ranked{0.1, 0.2, 0.9, 0.95};
    EXPECT_EQ(auc(ranked, y), 1.0);
    const std::vector<double> flat(4, 0.3);
    EXPECT_EQ(auc(flat, y), 0.5);
    const std::vector<int> one{1, 1, 1, 1};
    EXPECT_THROW(auc(s, one), SingleClassError);
}

TEST(Auc, MatchesPairwiseBruteForce) {
    CounterRng rng(17);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.uniform_below(30);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse grid so ties are frequent.
            s[i] = static_cast<double>(rng.uniform_below(6)) / 5.0;
            y[i] = static_cast<int>(rng.uniform_below(2));
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_NEAR(auc(s, y), brute_auc(s, y), 1e-12);
    }
}

TEST(Auc, MonotoneInvarianceAndLabelFlip) {
    CounterRng rng(18);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 4 + rng.uniform_below(20);
        std::vector<double> s(n), g(n);
        std::vector<int> y(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.uniform_below(8)) - 3.0;
            g[i] = std::exp(0.5 * s[i]) + 2.0;
            y[i] = static_cast<int>(rng.uniform_below(2));
        }
        y[0] = 0;
        y[1] = 1;
        for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - y[i];
        EXPECT_EQ(auc(s, y), auc(g, y));
        EXPECT_NEAR(auc(s, y) + auc(s, flipped), 1.0, 1e-15);
    }
}

TEST(MulticlassAuc, BinaryReductionPerfectAndOracle) {
    Tensor two(Shape{4, 2}, std::vector<double>{0.9, 0.1, 0.6, 0.4, 0.65, 0.35, 0.2, 0.8});
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_NEAR(multiclass_auc(two, y), auc(column(two, 1), y), 1e-15);

    Tensor perfect(Shape{3, 3}, std::vector<double>{5, 0, 0, 0, 5, 0, 0, 0, 5});
    EXPECT_EQ(multiclass_auc(perfect, std::vector<int>{0, 1, 2}), 1.0);

    CounterRng rng(19);
    Tensor s(Shape{9, 3});
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = rng.normal();
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 2, 1, 0};
    double expected = 0.0;
    for (int c = 0; c < 3; ++c) expected += brute_auc(column(s, static_cast<std::size_t>(c)), labels, c);
    EXPECT_NEAR(multiclass_auc(s, labels), expected / 3.0, 1e-12);

    // Classes absent from the labels are skipped.
    const std::vector<int> partial{0, 2, 2, 0, 0, 2, 2, 0, 0};
    const double two_present =
        0.5 * (brute_auc(column(s, 0), partial, 0) + brute_auc(column(s, 2), partial, 2));
    EXPECT_NEAR(multiclass_auc(s, partial), two_present, 1e-12);
    EXPECT_THROW(multiclass_auc(s, std::vector<int>(9, 1)), SingleClassError);
}

TEST(Summaries, MeanAndPopulationStd) {
    const auto s = summarize({0.6, std::nullopt, 0.8});
    EXPECT_EQ(s.defined, 2u);
    EXPECT_NEAR(s.mean, 0.7, 1e-15);
    EXPECT_NEAR(s.stddev, 0.1, 1e-15);
}

TEST(Summaries, GlobalTestWeightsShardsEqually) {
    // Model 0 scores 1.0 on a 2-row shard and 0.5 on a 100-row shard.
    AucMatrix m{{1.0, 0.5}, {0.7, 0.9}};
    const auto g = global_test(m);
    EXPECT_NEAR(*g.per_client[0], 0.75, 1e-15);
    EXPECT_NEAR(*g.per_client[1], 0.8, 1e-15);
    const auto l = local_test(m);
    EXPECT_NEAR(*l.per_client[0], 1.0, 1e-15);
    EXPECT_NEAR(*l.per_client[1], 0.9, 1e-15);
    EXPECT_NEAR(l.mean, 0.95, 1e-15);

    AucMatrix undefined{{std::nullopt, 0.6}, {0.4, std::nullopt}};
    EXPECT_NEAR(*global_test(undefined).per_client[0], 0.6, 1e-15);
    EXPECT_EQ(local_test(undefined).defined, 0u);
}

TEST(Summaries, UnequalShardSizesDoNotChangeWeights) {
    auto tests = small_task(3, 40);
    auto models = small_models(3);
    // Shrink shard 2 and check the per-model score is still the plain mean.
    std::vector<std::size_t> keep;
    int per_class[2] = {0, 0};
    for (std::size_t i = 0; i < tests[2].size(); ++i) {
        const int y = tests[2].labels[i];
        if (per_class[y] < 2) {
            keep.push_back(i);
            ++per_class[y];
        }
    }
    tests[2] = tests[2].subset(keep);
    ASSERT_EQ(tests[2].size(), 4u);
    ASSERT_GT(tests[0].size(), 20u);
    const auto g = global_test(models, tests);
    for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            const auto s = score_samples(models[i], tests[j]);
            sum += brute_auc(column(s, 0), tests[j].labels);
            ++count;
        }
        EXPECT_NEAR(*g.per_client[i], sum / count, 1e-12);
    }
}

TEST(Summaries, HarnessesMatchBruteForceOnScoreDumps) {
    const auto tests = small_task(4);
    auto models = small_models(3);
    const auto aucs = evaluate_auc_matrix(models, tests, true);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const auto s = score_samples(models[i], tests[j]);
            ASSERT_TRUE(aucs[i][j].has_value());
            EXPECT_NEAR(*aucs[i][j], brute_auc(column(s, 0), tests[j].labels), 1e-12);
        }
    }
    const auto local = local_test(models, tests);
    EXPECT_NEAR(local.mean, (*aucs[0][0] + *aucs[1][1] + *aucs[2][2]) / 3.0, 1e-12);

    // One client: global equals local.
    std::vector<Model> one{clone_model(models[0])};
    const std::vector<LabeledDataset> shard{tests[0]};
    EXPECT_EQ(*global_test(one, shard).per_client[0], *local_test(one, shard).per_client[0]);

    // Identical clients give identical AUCs.
    std::vector<Model> twins{clone_model(models[1]), clone_model(models[1])};
    const std::vector<LabeledDataset> same{tests[1], tests[1]};
    const auto t = local_test(twins, same);
    EXPECT_EQ(*t.per_client[0], *t.per_client[1]);
}

TEST(Summaries, EqualShardsPooledMatchesOnlyWhenShardAucsAgree) {
    // Two equal-size shards with the same per-shard AUC and identical score
    // distributions: pooled AUC equals the shard mean.
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    std::vector<double> pooled_s = s;
    std::vector<int> pooled_y = y;
    pooled_s.insert(pooled_s.end(), s.begin(), s.end());
    pooled_y.insert(pooled_y.end(), y.begin(), y.end());
    EXPECT_EQ(auc(pooled_s, pooled_y), 0.5 * (auc(s, y) + auc(s, y)));
    // Shifted second shard: per-shard AUCs still 0.75 each, pooled differs.
    std::vector<double> shifted = s;
    for (auto& v : shifted) v += 10.0;
    std::vector<double> mixed_s = s;
    mixed_s.insert(mixed_s.end(), shifted.begin(), shifted.end());
    EXPECT_NE(auc(mixed_s, pooled_y), 0.75);
}

TEST(Fairness, HandArithmetic) {
    const auto r = fairness_gap_from_aucs({0.8, 0.9}, {0.7, 0.8});
    ASSERT_TRUE(r.gap.has_value());
    EXPECT_NEAR(*r.gap, 0.10, 1e-12);
    EXPECT_EQ(*fairness_gap_from_aucs({0.7, 0.6}, {0.7, 0.6}).gap, 0.0);

    const auto skip = fairness_gap_from_aucs({0.8, std::nullopt, 0.6}, {0.5, 0.5, 0.5});
    EXPECT_NEAR(*skip.gap, 0.2, 1e-12);
    EXPECT_EQ(skip.excluded, (std::vector<std::size_t>{1}));
    EXPECT_FALSE(fairness_gap_from_aucs({std::nullopt}, {0.5}).gap.has_value());
}

TEST(Fairness, MatchesSubgroupScoreDumps) {
    const auto tests = small_task(5, 40);
    auto models = small_models(3);
    const auto r = fairness_gap(models, tests);
    double sum1 = 0.0, sum0 = 0.0;
    int n1 = 0, n0 = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto s = column(score_samples(models[k], tests[k]), 0);
        for (int a : {1, 0}) {
            std::vector<double> ss;
            std::vector<int> yy;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (tests[k].sensitive_attr[i] != a) continue;
                ss.push_back(s[i]);
                yy.push_back(tests[k].labels[i]);
            }
            const bool both = std::count(yy.begin(), yy.end(), 1) > 0 && std::count(yy.begin(), yy.end(), 0) > 0;
            if (!both) continue;
            (a == 1 ? sum1 : sum0) += brute_auc(ss, yy);
            ++(a == 1 ? n1 : n0);
        }
    }
    ASSERT_TRUE(r.gap.has_value());
    EXPECT_NEAR(*r.gap, std::abs(sum1 / n1 - sum0 / n0), 1e-12);

    auto no_attr = tests;
    no_attr[1].sensitive_attr.clear();
    EXPECT_THROW(fairness_gap(models, no_attr), MissingAttrError);
}

TEST(ModelAuc, SingleClassShardIsUndefined) {
    auto tests = small_task(6);
    auto models = small_models(1);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < tests[0].size(); ++i)
        if (tests[0].labels[i] == 1) rows.push_back(i);
    EXPECT_FALSE(model_auc(models[0], tests[0].subset(rows)).has_value());
    EXPECT_TRUE(model_auc(models[0], tests[0]).has_value());
}
