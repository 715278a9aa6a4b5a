#include "fedskd/baselines.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "fedskd/errors.hpp"

namespace fedskd {

namespace {

void check_schema(std::span<const ParamCollection> params, std::span<const double> weights) {
    if (params.empty()) throw SchemaMismatchError("aggregate: no parameter collections");
    if (weights.size() != params.size()) {
        throw SchemaMismatchError("aggregate: " + std::to_string(weights.size()) + " weights for " +
                                  std::to_string(params.size()) + " collections");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("aggregate: weights must be non-negative");
        total += w;
    }
    if (!(total > 0.0)) throw ConfigError("aggregate: weights sum to zero");
    const auto& ref = params[0];
    for (std::size_t k = 1; k < params.size(); ++k) {
        const auto& other = params[k];
        if (other.size() != ref.size()) {
            throw SchemaMismatchError("aggregate: collection " + std::to_string(k) + " has " +
                                      std::to_string(other.size()) + " entries, expected " +
                                      std::to_string(ref.size()));
        }
        for (std::size_t p = 0; p < ref.size(); ++p) {
            if (other[p].name != ref[p].name || other[p].role != ref[p].role ||
                other[p].value.shape() != ref[p].value.shape()) {
                throw SchemaMismatchError("aggregate: entry '" + other[p].name + "' " +
                                          shape_to_string(other[p].value.shape()) + " of collection " +
                                          std::to_string(k) + " does not match '" + ref[p].name + "' " +
                                          shape_to_string(ref[p].value.shape()));
            }
        }
    }
}

Tensor weighted_mean(std::span<const ParamCollection> params, std::span<const double> weights, std::size_t p) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    Tensor out(params[0][p].value.shape());
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double w = weights[k] / total;
        const auto& v = params[k][p].value;
        for (std::size_t e = 0; e < out.numel(); ++e) out[e] += w * v[e];
    }
    return out;
}

}  // namespace

ParamCollection fedavg_aggregate(std::span<const ParamCollection> params, std::span<const double> weights) {
    check_schema(params, weights);
    ParamCollection out = params[0];
    for (std::size_t p = 0; p < out.size(); ++p) out[p].value = weighted_mean(params, weights, p);
    return out;
}

std::vector<ParamCollection> fedbn_aggregate(std::span<const ParamCollection> params,
                                             std::span<const double> weights) {
    check_schema(params, weights);
    std::vector<ParamCollection> out(params.begin(), params.end());
    for (std::size_t p = 0; p < params[0].size(); ++p) {
        if (nn::is_batchnorm(params[0][p].role)) continue;
        const Tensor mean = weighted_mean(params, weights, p);
        for (auto& c : out) c[p].value = mean;
    }
    return out;
}

double fedprox_penalty(const Model& model, const ParamCollection& global, double mu) {
    std::map<std::string, const Tensor*> ref;
    for (const auto& e : global) ref.emplace(e.name, &e.value);
    double sq = 0.0;
    for (const auto& p : model.params()) {
        if (!nn::is_trainable(p.role)) continue;
        const auto it = ref.find(p.name);
        if (it == ref.end() || it->second->shape() != p.value.shape()) {
            throw SchemaMismatchError("fedprox: global parameters do not match '" + p.name + "'");
        }
        for (std::size_t e = 0; e < p.value.numel(); ++e) {
            const double d = p.value[e] - (*it->second)[e];
            sq += d * d;
        }
    }
    return 0.5 * mu * sq;
}

double fedprox_local_loss(Model& model, const Batch& batch, const ParamCollection& global, double mu) {
    const auto fwd = model.forward(batch.x, nn::Mode::eval);
    return softmax_cross_entropy(fwd.logits, batch.y).loss + fedprox_penalty(model, global, mu);
}

double fedprox_step(Model& model, Adam& opt, const Batch& batch, const ParamCollection& global, double mu) {
    model.zero_grad();
    const auto fwd = model.forward(batch.x, nn::Mode::train);
    const auto ce = softmax_cross_entropy(fwd.logits, batch.y);
    const double loss = ce.loss + fedprox_penalty(model, global, mu);
    if (!std::isfinite(loss)) throw NonFiniteLossError("fedprox local loss is non-finite");
    model.backward(ce.grad, {});
    if (mu != 0.0) {
        std::map<std::string, const Tensor*> ref;
        for (const auto& e : global) ref.emplace(e.name, &e.value);
        for (auto& p : model.params()) {
            if (!nn::is_trainable(p.role)) continue;
            const Tensor& g = *ref.at(p.name);
            for (std::size_t e = 0; e < p.value.numel(); ++e) p.grad[e] += mu * (p.value[e] - g[e]);
        }
    }
    opt.step(model);
    return loss;
}

namespace {

using Clock = std::chrono::steady_clock;

RoundReport start_report(const char* method, std::size_t round, std::size_t n) {
    RoundReport r;
    r.method = method;
    r.round = round;
    r.clients.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.clients[i].client = i;
        r.clients[i].sender = i;
        r.clients[i].self_consolidation = true;
    }
    return r;
}

void finish_log(ClientRoundLog& log, double ce_sum, std::size_t steps) {
    log.steps = steps;
    log.mean.ce_dam = steps ? ce_sum / static_cast<double>(steps) : 0.0;
    log.mean.joint = log.mean.ce_dam;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<double> shard_weights(const std::vector<ClientState>& clients) {
    std::vector<double> w;
    for (const auto& c : clients) w.push_back(static_cast<double>(c.train.size()));
    return w;
}

}  // namespace

void run_local(std::vector<ClientState>& clients, const BaselineSettings& s, const RoundCallback& on_round,
               const RoundHooks& hooks) {
    for (std::size_t r = 0; r < s.rounds; ++r) {
        const auto t0 = Clock::now();
        auto report = start_report("local", r, clients.size());
        parallel_for(clients.size(), s.workers, [&](std::size_t i) {
            double ce = 0.0;
            for (std::size_t it = 0; it < s.iters; ++it) {
                const Batch b = clients[i].next_batch();
                if (hooks.on_batch) hooks.on_batch(i, i);
                ce += supervised_step(clients[i].dam, clients[i].optimizer, b);
            }
            finish_log(report.clients[i], ce, s.iters);
        });
        report.wall_seconds = seconds_since(t0);
        if (on_round) on_round(report, clients);
    }
}

void run_centralized(std::vector<ClientState>& clients, const BaselineSettings& s, const RoundCallback& on_round,
                     const RoundHooks& hooks) {
    if (clients.empty()) return;
    std::vector<LabeledDataset> shards;
    std::vector<std::size_t> owner;
    for (const auto& c : clients) {
        shards.push_back(c.train);
        owner.insert(owner.end(), c.train.size(), c.id);
    }
    const LabeledDataset pooled = concat(shards);
    BatchIterator batches(pooled.size(), s.batch_size, derive_seed(s.seed, SeedPurpose::minibatch, 0));
    Model& model = clients[0].dam;
    Adam& opt = clients[0].optimizer;

    for (std::size_t r = 0; r < s.rounds; ++r) {
        const auto t0 = Clock::now();
        auto report = start_report("centralized", r, clients.size());
        double ce = 0.0;
        for (std::size_t it = 0; it < s.iters; ++it) {
            const auto rows = batches.next();
            if (hooks.on_batch) {
                std::set<std::size_t> owners;
                for (auto row : rows) owners.insert(owner[row]);
                for (auto o : owners) hooks.on_batch(0, o);
            }
            ce += supervised_step(model, opt, take_batch(pooled, rows));
        }
        for (auto& log : report.clients) finish_log(log, ce, s.iters);
        for (std::size_t i = 1; i < clients.size(); ++i) clients[i].dam = clone_model(model);
        report.wall_seconds = seconds_since(t0);
        if (on_round) on_round(report, clients);
    }
}

void run_server_method(ServerMethod method, std::vector<ClientState>& clients, const BaselineSettings& s,
                       const RoundCallback& on_round, const RoundHooks& hooks) {
    if (clients.empty()) return;
    const char* name = method == ServerMethod::fedavg ? "fedavg" : method == ServerMethod::fedprox ? "fedprox" : "fedbn";
    const auto weights = shard_weights(clients);
    ParamCollection global = clients[0].dam.named_parameters();
    for (auto& c : clients) c.dam.load_parameters(global);

    auto not_bn = [](nn::ParamRole role) { return !nn::is_batchnorm(role); };
    for (std::size_t r = 0; r < s.rounds; ++r) {
        const auto t0 = Clock::now();
        auto report = start_report(name, r, clients.size());
        parallel_for(clients.size(), s.workers, [&](std::size_t i) {
            auto& c = clients[i];
            if (method == ServerMethod::fedbn) {
                c.dam.load_parameters(global, +not_bn);
            } else {
                c.dam.load_parameters(global);
            }
            Adam opt(s.lr);
            double ce = 0.0;
            for (std::size_t it = 0; it < s.iters; ++it) {
                const Batch b = c.next_batch();
                if (hooks.on_batch) hooks.on_batch(i, i);
                ce += method == ServerMethod::fedprox ? fedprox_step(c.dam, opt, b, global, s.prox_mu)
                                                      : supervised_step(c.dam, opt, b);
            }
            finish_log(report.clients[i], ce, s.iters);
        });

        std::vector<ParamCollection> local;
        for (const auto& c : clients) local.push_back(c.dam.named_parameters());
        if (method == ServerMethod::fedbn) {
            auto per_client = fedbn_aggregate(local, weights);
            for (std::size_t i = 0; i < clients.size(); ++i) clients[i].dam.load_parameters(per_client[i]);
            global = per_client[0];
        } else {
            global = fedavg_aggregate(local, weights);
            for (auto& c : clients) c.dam.load_parameters(global);
        }
        report.wall_seconds = seconds_since(t0);
        if (on_round) on_round(report, clients);
    }
}

void run_fedcross(std::vector<ClientState>& clients, const BaselineSettings& s, const RoundCallback& on_round,
                  const RoundHooks& hooks) {
    if (clients.empty()) return;
    const std::size_t n = clients.size();
    Model& model = clients[0].dam;
    Adam& opt = clients[0].optimizer;
    for (std::size_t r = 0; r < s.rounds; ++r) {
        const auto t0 = Clock::now();
        const auto schedule = generate_schedule(n, r, s.seed);
        auto report = start_report("fedcross", r, n);
        report.schedule = schedule.order;
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t host = schedule.order[k];
            const std::size_t steps = s.iters / n + (k < s.iters % n ? 1 : 0);
            double ce = 0.0;
            for (std::size_t it = 0; it < steps; ++it) {
                const Batch b = clients[host].next_batch();
                if (hooks.on_batch) hooks.on_batch(host, host);
                ce += supervised_step(model, opt, b);
            }
            auto& log = report.clients[host];
            log.sender = 0;
            log.self_consolidation = host == 0;
            finish_log(log, ce, steps);
        }
        for (std::size_t i = 1; i < n; ++i) clients[i].dam = clone_model(model);
        report.wall_seconds = seconds_since(t0);
        if (on_round) on_round(report, clients);
    }
}

void run_fedcross_dagger(std::vector<ClientState>& clients, const BaselineSettings& s, const RoundCallback& on_round,
                         const RoundHooks& hooks) {
    const std::size_t n = clients.size();
    for (std::size_t r = 0; r < s.rounds; ++r) {
        const auto t0 = Clock::now();
        const auto schedule = generate_schedule(n, r, s.seed);
        auto report = start_report("fedcross_dagger", r, n);
        report.schedule = schedule.order;
        parallel_for(n, s.workers, [&](std::size_t host) {
            const std::size_t owner = schedule.order[host];
            ClientState& model_owner = clients[owner];
            ClientState& h = clients[host];
            double ce = 0.0;
            for (std::size_t it = 0; it < s.iters; ++it) {
                const Batch b = h.next_batch();
                if (hooks.on_batch) hooks.on_batch(host, host);
                ce += supervised_step(model_owner.dam, model_owner.optimizer, b);
            }
            auto& log = report.clients[host];
            log.sender = owner;
            log.self_consolidation = owner == host;
            finish_log(log, ce, s.iters);
        });
        report.wall_seconds = seconds_since(t0);
        if (on_round) on_round(report, clients);
    }
}

}  // namespace fedskd
