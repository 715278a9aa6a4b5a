#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedskd/data.hpp"
#include "fedskd/model.hpp"
#include "fedskd/optim.hpp"
#include "fedskd/skd.hpp"

namespace fedskd {

// order[i] is the sender whose DAM client i receives this round. Indices are
// 0-based throughout the code base.
struct TransferSchedule {
    std::vector<std::size_t> order;
    std::size_t round = 0;

    std::size_t size() const { return order.size(); }
    bool is_bijection() const;
};

// Fisher-Yates over 0..n-1 with the stream keyed by
// derive_seed(seed, schedule, round). Self-assignments are allowed.
TransferSchedule generate_schedule(std::size_t n, std::size_t round, std::uint64_t seed);

// Cyclic minibatch order over a shard: each epoch is a fresh permutation and
// a batch that runs past the end of an epoch continues into the next one, so
// every batch has exactly min(batch_size, n) rows.
class BatchIterator {
public:
    BatchIterator() = default;
    BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next();
    std::size_t epoch() const { return epoch_; }

private:
    void reshuffle();

    std::size_t n_ = 0;
    std::size_t batch_size_ = 1;
    CounterRng rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
    std::size_t epoch_ = 0;
};

struct Batch {
    Tensor x;
    std::vector<int> y;
};

Batch take_batch(const LabeledDataset& ds, std::span<const std::size_t> rows);

struct ClientState {
    std::size_t id = 0;
    Model dam;
    Adam optimizer;
    LabeledDataset train;
    LabeledDataset test;
    BatchIterator batches;
    std::uint64_t seed = 0;

    Batch next_batch();
};

// Client i: model seed derive(seed, model_init, i), batch seed
// derive(seed, minibatch, i).
std::vector<ClientState> make_clients(std::span<const ModelSpec> specs, std::vector<LabeledDataset> train,
                                      std::vector<LabeledDataset> test, double lr, std::size_t batch_size,
                                      std::uint64_t seed);

struct StepLosses {
    double ce_dam = 0.0;
    double ce_ktm = 0.0;
    SkdLoss skd;
    double joint = 0.0;
};

struct SkdSettings {
    double gamma = 1.0;
    SkdComponents components = SkdComponents::all();
    const RegionMaskSet* masks = nullptr;
    SkdOptions options;
};

// One optimizer step on
//   CE(dam(x), y) + gamma * L_skd(dam(x), ktm(x)) + CE(ktm(x), y)
// for both models. The KTM head must be frozen. Throws NonFiniteLossError.
StepLosses bidirectional_step(Model& dam, Adam& dam_opt, Model& ktm, Adam& ktm_opt, const Batch& batch,
                              const SkdSettings& skd);

// Plain supervised step; returns the cross-entropy of the forward pass.
double supervised_step(Model& model, Adam& opt, const Batch& batch);
inline double self_consolidation_step(Model& dam, Adam& opt, const Batch& batch) {
    return supervised_step(dam, opt, batch);
}

struct ClientRoundLog {
    std::size_t client = 0;
    std::size_t sender = 0;
    bool self_consolidation = false;
    std::size_t steps = 0;
    // Means over the round's steps.
    StepLosses mean;
};

struct RoundReport {
    std::size_t round = 0;
    std::string method;
    std::vector<std::size_t> schedule;
    bool skd_active = false;
    std::vector<ClientRoundLog> clients;
    double wall_seconds = 0.0;

    // One JSON object; wall time is omitted when `with_time` is false so
    // reports can be compared across runs.
    std::string to_json(bool with_time = true) const;
};

struct RoundHooks {
    // Called with the received KTM right after its head is frozen, and again
    // just before it is discarded.
    std::function<void(std::size_t receiver, const Model& ktm)> on_receive;
    std::function<void(std::size_t receiver, const Model& ktm)> on_discard;
    // Called for every minibatch: (training client, client whose shard was read).
    std::function<void(std::size_t client, std::size_t shard_owner)> on_batch;
};

struct RoundConfig {
    std::size_t iters = 15;
    SkdSettings skd;
    bool skd_active = true;
    double lr = 1e-4;
    std::size_t workers = 1;
};

// Runs f(0..n-1), on up to `workers` threads. The first exception by index is
// rethrown after all tasks finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& f);

// Snapshots every sender DAM at round start, then each client trains its DAM
// (and the received clone, head frozen, with a fresh Adam) for cfg.iters steps
// and discards the clone. Before SKD activation gamma is treated as 0.
RoundReport run_round(std::vector<ClientState>& clients, const TransferSchedule& schedule, const RoundConfig& cfg,
                      const RoundHooks& hooks = {});

// SKD is active in 0-based round r iff r >= start_fraction * total_rounds.
bool skd_active_in_round(std::size_t round, std::size_t total_rounds, double start_fraction);

using RoundCallback = std::function<void(const RoundReport&, std::vector<ClientState>&)>;

struct FedSkdSettings {
    std::size_t rounds = 30;
    double skd_start_fraction = 0.0;
    std::uint64_t seed = 0;
    RoundConfig round;
};

void run_fedskd(std::vector<ClientState>& clients, const FedSkdSettings& settings, const RoundCallback& on_round = {},
                const RoundHooks& hooks = {});

}  // namespace fedskd
