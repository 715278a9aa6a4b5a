#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedskd/model.hpp"
#include "fedskd/protocol.hpp"

namespace fedskd {

// Element-wise weighted mean; weights are normalized to sum 1. Every
// collection must have the same names, roles and shapes in the same order,
// otherwise SchemaMismatchError.
ParamCollection fedavg_aggregate(std::span<const ParamCollection> params, std::span<const double> weights);

// Like fedavg_aggregate for everything except batch-norm entries, which stay
// with their client. Returns one collection per input.
std::vector<ParamCollection> fedbn_aggregate(std::span<const ParamCollection> params, std::span<const double> weights);

// (mu / 2) * sum ||theta - theta_global||^2 over trainable parameters.
double fedprox_penalty(const Model& model, const ParamCollection& global, double mu);

// Cross-entropy on the batch (eval-mode forward) plus the proximal penalty.
double fedprox_local_loss(Model& model, const Batch& batch, const ParamCollection& global, double mu);

// One Adam step on CE + proximal penalty; returns that loss.
double fedprox_step(Model& model, Adam& opt, const Batch& batch, const ParamCollection& global, double mu);

struct BaselineSettings {
    std::size_t rounds = 30;
    std::size_t iters = 15;
    double lr = 1e-4;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    double prox_mu = 0.01;
    std::size_t workers = 1;
};

// Each client trains its own model on its own shard.
void run_local(std::vector<ClientState>& clients, const BaselineSettings& s, const RoundCallback& on_round = {},
               const RoundHooks& hooks = {});

// Client 0's model trained on the pooled training shards; afterwards every
// client holds a copy of it.
void run_centralized(std::vector<ClientState>& clients, const BaselineSettings& s,
                     const RoundCallback& on_round = {}, const RoundHooks& hooks = {});

// Server-based methods on a homogeneous fleet. The global model starts from
// client 0's initialization, local training uses a fresh Adam per round and
// aggregation weights are training-shard sizes.
enum class ServerMethod { fedavg, fedprox, fedbn };
void run_server_method(ServerMethod method, std::vector<ClientState>& clients, const BaselineSettings& s,
                       const RoundCallback& on_round = {}, const RoundHooks& hooks = {});

// One model (client 0's) visits the hosts in schedule order each round; host k
// of the visit sequence trains it for iters / N steps (the remainder goes to
// the first hosts). Afterwards every client holds a copy.
void run_fedcross(std::vector<ClientState>& clients, const BaselineSettings& s, const RoundCallback& on_round = {},
                  const RoundHooks& hooks = {});

// Every client's model circulates: in round r, host i trains model order[i]
// with that model's own optimizer for `iters` steps on host i's shard. Models
// stay bound to their owners for evaluation.
void run_fedcross_dagger(std::vector<ClientState>& clients, const BaselineSettings& s,
                         const RoundCallback& on_round = {}, const RoundHooks& hooks = {});

}  // namespace fedskd
