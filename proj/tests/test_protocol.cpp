#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>

#include "fedskd/baselines.hpp"
#include "fedskd/errors.hpp"
#include "fedskd/protocol.hpp"
#include "skd_oracles.hpp"

using namespace fedskd;

namespace {

ModelSpec small_spec(std::size_t width = 6) {
    ModelSpec s;
    s.base_width = width;
    s.input_shape = {1, 8, 8};
    // Tap 4 is 1x1 at this input size, too small for 2x2 regions.
    s.tap_layers = {1, 2, 3};
    return s;
}

std::vector<ClientState> small_fleet(std::size_t n, std::uint64_t seed = 0, std::size_t step = 2, double lr = 1e-3) {
    SyntheticTaskSpec task;
    task.n_clients = n;
    task.input_shape = {1, 8, 8};
    task.samples_per_client = 24;
    task.seed = seed;
    std::vector<LabeledDataset> train, test;
    for (const auto& shard : make_synthetic_task(task)) {
        auto split = stratified_split(shard, 0.25, seed);
        train.push_back(split.train);
        test.push_back(split.test);
    }
    const auto specs = heterogeneous_fleet(n, small_spec(4 + step * (n - 1)), step);
    return make_clients(specs, train, test, lr, 4, seed);
}

// Two classes: a bright left half or a bright right half plus small noise.
LabeledDataset separable_toy(std::size_t n, std::uint64_t seed) {
    LabeledDataset ds;
    ds.inputs = Tensor(Shape{n, 1, 8, 8});
    CounterRng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        ds.labels.push_back(y);
        for (std::size_t p = 0; p < 64; ++p) {
            const bool left = p % 8 < 4;
            ds.inputs[i * 64 + p] = ((left == (y == 0)) ? 1.0 : -1.0) + 0.1 * rng.normal();
        }
    }
    return ds;
}

bool same_params(const Model& a, const Model& b, bool head_only = false) {
    const auto pa = a.named_parameters();
    const auto pb = b.named_parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (head_only && pa[i].name.rfind("head", 0) != 0) continue;
        if (!(pa[i].value == pb[i].value)) return false;
    }
    return true;
}

const RegionMaskSet& grid_masks() {
    static const RegionMaskSet masks = make_grid_region_masks(Shape{8, 8}, {2, 2});
    return masks;
}

RoundConfig round_config(std::size_t iters = 3) {
    RoundConfig cfg;
    cfg.iters = iters;
    cfg.lr = 1e-3;
    cfg.skd.masks = &grid_masks();
    // Narrow nets on 8x8 inputs can emit an all-zero pixel row after ReLU.
    cfg.skd.options.row_eps = 1e-12;
    return cfg;
}

}  // namespace

TEST(Schedule, GoldenAndSmallCases) {
    // tests/oracles/rng_oracle.py
    EXPECT_EQ(generate_schedule(5, 3, 7).order, (std::vector<std::size_t>{2, 4, 0, 3, 1}));
    EXPECT_EQ(generate_schedule(1, 0, 3).order, (std::vector<std::size_t>{0}));
    EXPECT_EQ(generate_schedule(6, 2, 9).order, generate_schedule(6, 2, 9).order);
    EXPECT_EQ(generate_schedule(6, 2, 9).round, 2u);
}

TEST(Schedule, BijectionFuzz) {
    std::set<std::vector<std::size_t>> distinct;
    for (std::size_t r = 0; r < 1000; ++r) {
        const std::size_t n = 1 + r % 8;
        const auto s = generate_schedule(n, r, 42);
        ASSERT_TRUE(s.is_bijection());
        std::vector<std::size_t> sorted = s.order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> expected(n);
        std::iota(expected.begin(), expected.end(), 0);
        ASSERT_EQ(sorted, expected);
        if (n == 4) distinct.insert(s.order);
    }
    EXPECT_GT(distinct.size(), 10u);
    TransferSchedule bad{{0, 0, 1}, 0};
    EXPECT_FALSE(bad.is_bijection());
}

TEST(BatchIterator, EpochsCoverShardAndBatchesAreFull) {
    BatchIterator it(10, 4, 5);
    std::vector<std::size_t> seen;
    for (int b = 0; b < 5; ++b) {
        const auto rows = it.next();
        ASSERT_EQ(rows.size(), 4u);
        seen.insert(seen.end(), rows.begin(), rows.end());
    }
    // 20 rows = two full epochs.
    for (std::size_t e = 0; e < 2; ++e) {
        std::vector<std::size_t> epoch(seen.begin() + static_cast<long>(10 * e), seen.begin() + static_cast<long>(10 * e + 10));
        std::sort(epoch.begin(), epoch.end());
        std::vector<std::size_t> all(10);
        std::iota(all.begin(), all.end(), 0);
        EXPECT_EQ(epoch, all);
    }
    BatchIterator small(3, 8, 1);
    EXPECT_EQ(small.next().size(), 3u);
}

TEST(BidirectionalStep, GammaZeroOnIdenticalCloneDoublesCe) {
    Model dam = build_model(small_spec(), 1);
    Model ktm = clone_model(dam);
    set_head_frozen(ktm, true);
    Adam a(1e-3), b(1e-3);
    const auto toy = separable_toy(8, 1);
    std::vector<std::size_t> rows(8);
    std::iota(rows.begin(), rows.end(), 0);
    SkdSettings skd;
    skd.gamma = 0.0;
    const auto out = bidirectional_step(dam, a, ktm, b, take_batch(toy, rows), skd);
    EXPECT_EQ(out.ce_dam, out.ce_ktm);
    EXPECT_NEAR(out.joint, 2.0 * out.ce_dam, 1e-12 * out.joint);
}

TEST(BidirectionalStep, FrozenHeadUnchangedAndRequired) {
    auto fleet = small_fleet(2);
    Model ktm = clone_model(fleet[1].dam);
    Adam ktm_opt(1e-3);
    const auto masks = make_grid_region_masks(Shape{8, 8}, {2, 2});
    SkdSettings skd;
    skd.masks = &masks;
    EXPECT_THROW(bidirectional_step(fleet[0].dam, fleet[0].optimizer, ktm, ktm_opt, fleet[0].next_batch(), skd),
                 ConfigError);
    set_head_frozen(ktm, true);
    const Model receipt = clone_model(ktm);
    for (int k = 0; k < 5; ++k) {
        const auto out = bidirectional_step(fleet[0].dam, fleet[0].optimizer, ktm, ktm_opt, fleet[0].next_batch(), skd);
        EXPECT_GT(out.skd.total, 0.0);
        EXPECT_NEAR(out.joint, out.ce_dam + skd.gamma * out.skd.total + out.ce_ktm, 1e-12 * out.joint);
    }
    EXPECT_TRUE(same_params(ktm, receipt, true));
    EXPECT_FALSE(same_params(ktm, receipt));
}

TEST(BidirectionalStep, SkdOffGradientsEqualCeOnly) {
    auto fleet = small_fleet(2);
    Model ktm = clone_model(fleet[1].dam);
    set_head_frozen(ktm, true);
    Adam dam_opt(1e-3), ktm_opt(1e-3);
    Model dam = clone_model(fleet[0].dam);
    Model dam_ref = clone_model(dam);
    Model ktm_ref = clone_model(ktm);
    const Batch batch = fleet[0].next_batch();
    SkdSettings skd;
    skd.gamma = 7.5;
    skd.components = SkdComponents::none();
    bidirectional_step(dam, dam_opt, ktm, ktm_opt, batch, skd);

    for (Model* m : {&dam_ref, &ktm_ref}) {
        m->zero_grad();
        const auto out = m->forward(batch.x, nn::Mode::train);
        m->backward(softmax_cross_entropy(out.logits, batch.y).grad, {});
    }
    auto grads_equal = [](const Model& a, const Model& b) {
        for (std::size_t i = 0; i < a.params().size(); ++i) {
            if (!(a.params()[i].grad == b.params()[i].grad)) return false;
        }
        return true;
    };
    EXPECT_TRUE(grads_equal(dam, dam_ref));
    EXPECT_TRUE(grads_equal(ktm, ktm_ref));
}

TEST(BidirectionalStep, SkdGradientsReachBothModels) {
    // With gamma large and CE removed from the comparison, the DAM gradient
    // differs from the CE-only gradient exactly when SKD is on.
    auto fleet = small_fleet(2);
    Model ktm = clone_model(fleet[1].dam);
    set_head_frozen(ktm, true);
    Adam dam_opt(1e-3), ktm_opt(1e-3);
    Model dam = clone_model(fleet[0].dam);
    Model dam_ref = clone_model(dam);
    const Batch batch = fleet[0].next_batch();
    SkdSettings skd;
    skd.components = SkdComponents::parse("B");
    bidirectional_step(dam, dam_opt, ktm, ktm_opt, batch, skd);
    dam_ref.zero_grad();
    const auto out = dam_ref.forward(batch.x, nn::Mode::train);
    dam_ref.backward(softmax_cross_entropy(out.logits, batch.y).grad, {});
    bool differs = false;
    for (std::size_t i = 0; i < dam.params().size(); ++i)
        if (!(dam.params()[i].grad == dam_ref.params()[i].grad)) differs = true;
    EXPECT_TRUE(differs);
}

TEST(BidirectionalStep, NonFiniteLossAborts) {
    auto fleet = small_fleet(2);
    Model ktm = clone_model(fleet[1].dam);
    set_head_frozen(ktm, true);
    Adam ktm_opt(1e-3);
    for (auto& p : fleet[0].dam.params()) {
        if (p.head && p.role == nn::ParamRole::bias) p.value[0] = std::nan("");
    }
    SkdSettings skd;
    skd.components = SkdComponents::parse("B");
    EXPECT_THROW(bidirectional_step(fleet[0].dam, fleet[0].optimizer, ktm, ktm_opt, fleet[0].next_batch(), skd),
                 NonFiniteLossError);
}

TEST(BidirectionalStep, SeparableToyJointLossHalvesIn50Steps) {
    // Mean joint loss over the first and the last five steps.
    const auto toy = separable_toy(32, 3);
    Model dam = build_model(small_spec(6), 4);
    Model ktm = build_model(small_spec(4), 5);
    set_head_frozen(ktm, true);
    Adam dam_opt(1e-3), ktm_opt(1e-3);
    BatchIterator it(toy.size(), 8, 6);
    const auto masks = make_grid_region_masks(Shape{8, 8}, {2, 2});
    SkdSettings skd;
    skd.masks = &masks;
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto rows = it.next();
        const auto out = bidirectional_step(dam, dam_opt, ktm, ktm_opt, take_batch(toy, rows), skd);
        if (k < 5) first += out.joint / 5.0;
        if (k >= 45) last += out.joint / 5.0;
    }
    EXPECT_LE(last, 0.5 * first);
}

TEST(SelfConsolidation, EqualsForwardCeAndDecreases) {
    const auto toy = separable_toy(32, 7);
    Model m = build_model(small_spec(), 8);
    Adam opt(1e-3);
    BatchIterator it(toy.size(), 8, 9);
    // Mean batch loss over the first and the last five steps.
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto batch = take_batch(toy, it.next());
        Model probe = clone_model(m);
        const double expected = softmax_cross_entropy(probe.forward(batch.x, nn::Mode::train).logits, batch.y).loss;
        const double loss = self_consolidation_step(m, opt, batch);
        ASSERT_TRUE(std::isfinite(loss));
        EXPECT_EQ(loss, expected);
        if (k < 5) first += loss / 5.0;
        if (k >= 45) last += loss / 5.0;
    }
    EXPECT_LE(last, 0.5 * first);
}

TEST(RunRound, InvariantsHoldEveryRound) {
    auto fleet = small_fleet(4, 1);
    std::vector<ModelSpec> specs;
    for (const auto& c : fleet) specs.push_back(c.dam.spec());
    const auto masks = make_grid_region_masks(Shape{8, 8}, {2, 2});
    RoundConfig cfg = round_config(2);
    cfg.skd.masks = &masks;
    cfg.skd.gamma = 2.0;

    std::vector<std::optional<Model>> received(4);
    std::size_t discards = 0;
    RoundHooks hooks;
    hooks.on_receive = [&](std::size_t i, const Model& ktm) {
        EXPECT_TRUE(ktm.head_frozen());
        received[i] = clone_model(ktm);
    };
    hooks.on_discard = [&](std::size_t i, const Model& ktm) {
        ASSERT_TRUE(received[i].has_value());
        EXPECT_TRUE(same_params(ktm, *received[i], true));
        ++discards;
    };
    hooks.on_batch = [](std::size_t client, std::size_t owner) { EXPECT_EQ(client, owner); };

    for (std::size_t r = 0; r < 6; ++r) {
        const auto schedule = generate_schedule(4, r, 11);
        std::vector<Model> senders;
        for (const auto& c : fleet) senders.push_back(clone_model(c.dam));
        std::fill(received.begin(), received.end(), std::nullopt);
        const auto report = run_round(fleet, schedule, cfg, hooks);
        ASSERT_EQ(report.clients.size(), 4u);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_EQ(fleet[i].dam.spec(), specs[i]);
            const auto& log = report.clients[i];
            EXPECT_EQ(log.sender, schedule.order[i]);
            EXPECT_EQ(log.self_consolidation, schedule.order[i] == i);
            EXPECT_EQ(log.steps, 2u);
            if (!log.self_consolidation) {
                // The clone is the sender's round-start DAM.
                EXPECT_TRUE(same_params(*received[i], senders[schedule.order[i]], true));
                const double sum = log.mean.ce_dam + cfg.skd.gamma * log.mean.skd.total + log.mean.ce_ktm;
                EXPECT_LE(std::abs(log.mean.joint - sum), 1e-6 * std::abs(log.mean.joint));
            }
        }
    }
    EXPECT_GT(discards, 0u);
}

TEST(RunRound, ParallelMatchesSequential) {
    auto a = small_fleet(3, 2);
    auto b = small_fleet(3, 2);
    RoundConfig cfg = round_config(2);
    cfg.skd.components = SkdComponents::parse("BP");
    RoundConfig par = cfg;
    par.workers = 3;
    for (std::size_t r = 0; r < 3; ++r) {
        const auto s = generate_schedule(3, r, 5);
        const auto ra = run_round(a, s, cfg);
        const auto rb = run_round(b, s, par);
        EXPECT_EQ(ra.to_json(false), rb.to_json(false));
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(same_params(a[i].dam, b[i].dam));
}

TEST(RunRound, ScheduleSizeMustMatch) {
    auto fleet = small_fleet(2);
    EXPECT_THROW(run_round(fleet, generate_schedule(3, 0, 0), round_config()), MismatchError);
    EXPECT_THROW(run_round(fleet, TransferSchedule{{1, 1}, 0}, round_config()), MismatchError);
}

TEST(RunFedSkd, DeterministicReports) {
    auto run = [] {
        auto fleet = small_fleet(3, 3);
        FedSkdSettings s;
        s.rounds = 3;
        s.seed = 3;
        s.round = round_config(2);
        std::vector<std::string> lines;
        run_fedskd(fleet, s, [&](const RoundReport& r, std::vector<ClientState>&) { lines.push_back(r.to_json(false)); });
        return lines;
    };
    const auto first = run();
    EXPECT_EQ(first.size(), 3u);
    EXPECT_EQ(first, run());
}

TEST(RunFedSkd, SingleClientDegeneratesToLocal) {
    auto a = small_fleet(1, 4);
    auto b = small_fleet(1, 4);
    FedSkdSettings s;
    s.rounds = 3;
    s.seed = 4;
    s.round = round_config(3);
    std::size_t consolidations = 0;
    run_fedskd(a, s, [&](const RoundReport& r, std::vector<ClientState>&) {
        consolidations += r.clients[0].self_consolidation;
    });
    EXPECT_EQ(consolidations, 3u);
    BaselineSettings bs;
    bs.rounds = 3;
    bs.iters = 3;
    bs.lr = 1e-3;
    bs.seed = 4;
    run_local(b, bs);
    EXPECT_TRUE(same_params(a[0].dam, b[0].dam));
}

TEST(RunFedSkd, SkdOffMatchesLocalDamUpdates) {
    auto a = small_fleet(3, 5);
    auto b = small_fleet(3, 5);
    FedSkdSettings s;
    s.rounds = 2;
    s.seed = 5;
    s.round = round_config(3);
    s.round.skd.components = SkdComponents::none();
    run_fedskd(a, s);
    BaselineSettings bs;
    bs.rounds = 2;
    bs.iters = 3;
    bs.lr = 1e-3;
    bs.seed = 5;
    run_local(b, bs);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(same_params(a[i].dam, b[i].dam)) << i;
}

TEST(RunFedSkd, ActivationTiming) {
    EXPECT_TRUE(skd_active_in_round(0, 30, 0.0));
    EXPECT_FALSE(skd_active_in_round(22, 30, 0.75));
    EXPECT_TRUE(skd_active_in_round(23, 30, 0.75));
    EXPECT_FALSE(skd_active_in_round(29, 30, 1.0));

    auto fleet = small_fleet(2, 6);
    FedSkdSettings s;
    s.rounds = 4;
    s.skd_start_fraction = 0.5;
    s.seed = 6;
    s.round = round_config(1);
    std::vector<bool> active;
    run_fedskd(fleet, s, [&](const RoundReport& r, std::vector<ClientState>&) {
        active.push_back(r.skd_active);
        if (!r.skd_active) {
            for (const auto& c : r.clients) {
                if (c.self_consolidation) continue;
                EXPECT_EQ(c.mean.joint, c.mean.ce_dam + c.mean.ce_ktm);
            }
        }
    });
    EXPECT_EQ(active, (std::vector<bool>{false, false, true, true}));
}

TEST(ParallelFor, RunsAllAndRethrowsLowestIndex) {
    std::vector<std::atomic<int>> hits(20);
    parallel_for(20, 4, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
    try {
        parallel_for(10, 3, [](std::size_t i) {
            if (i == 7 || i == 2) throw std::runtime_error("task " + std::to_string(i));
        });
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "task 2");
    }
}

TEST(RoundReport, JsonHasLossBreakdown) {
    auto fleet = small_fleet(2, 7);
    const auto report = run_round(fleet, TransferSchedule{{1, 0}, 0}, round_config(1));
    const auto json = report.to_json(true);
    for (const char* key : {"\"round\"", "\"schedule\"", "\"ce_dam\"", "\"ce_ktm\"", "\"skd_batch\"", "\"joint\"",
                            "\"wall_seconds\""}) {
        EXPECT_NE(json.find(key), std::string::npos) << key;
    }
    EXPECT_EQ(report.to_json(false).find("wall_seconds"), std::string::npos);
}
