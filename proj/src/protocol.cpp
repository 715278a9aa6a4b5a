#include "fedskd/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fedskd/errors.hpp"

namespace fedskd {

bool TransferSchedule::is_bijection() const {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] != i) return false;
    }
    return true;
}

TransferSchedule generate_schedule(std::size_t n, std::size_t round, std::uint64_t seed) {
    if (n == 0) throw ConfigError("schedule: need at least one client");
    TransferSchedule s;
    s.round = round;
    s.order.resize(n);
    std::iota(s.order.begin(), s.order.end(), std::size_t{0});
    CounterRng rng(derive_seed(seed, SeedPurpose::schedule, round));
    rng.shuffle(s.order);
    return s;
}

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(std::max<std::size_t>(batch_size, 1)), rng_(seed) {
    if (n_ == 0) throw EmptyClientError("batch iterator: empty shard");
    perm_.resize(n_);
    reshuffle();
}

void BatchIterator::reshuffle() {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    rng_.shuffle(perm_);
    pos_ = 0;
}

std::vector<std::size_t> BatchIterator::next() {
    if (n_ == 0) throw EmptyClientError("batch iterator: not initialized");
    const std::size_t want = std::min(batch_size_, n_);
    std::vector<std::size_t> rows;
    rows.reserve(want);
    while (rows.size() < want) {
        if (pos_ == n_) {
            reshuffle();
            ++epoch_;
        }
        rows.push_back(perm_[pos_++]);
    }
    return rows;
}

Batch take_batch(const LabeledDataset& ds, std::span<const std::size_t> rows) {
    Batch b;
    b.x = gather_rows(ds.inputs, rows);
    b.y.reserve(rows.size());
    for (auto r : rows) b.y.push_back(ds.labels[r]);
    return b;
}

Batch ClientState::next_batch() {
    const auto rows = batches.next();
    return take_batch(train, rows);
}

std::vector<ClientState> make_clients(std::span<const ModelSpec> specs, std::vector<LabeledDataset> train,
                                      std::vector<LabeledDataset> test, double lr, std::size_t batch_size,
                                      std::uint64_t seed) {
    if (specs.size() != train.size() || specs.size() != test.size()) {
        throw MismatchError("clients: " + std::to_string(specs.size()) + " specs for " +
                            std::to_string(train.size()) + " train and " + std::to_string(test.size()) +
                            " test shards");
    }
    std::vector<ClientState> clients;
    clients.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (train[i].size() == 0) throw EmptyClientError("client " + std::to_string(i) + " has no training data");
        ClientState c;
        c.id = i;
        c.seed = derive_seed(seed, SeedPurpose::model_init, i);
        c.dam = build_model(specs[i], c.seed);
        c.optimizer = Adam(lr);
        c.batches = BatchIterator(train[i].size(), batch_size, derive_seed(seed, SeedPurpose::minibatch, i));
        c.train = std::move(train[i]);
        c.test = std::move(test[i]);
        clients.push_back(std::move(c));
    }
    return clients;
}

namespace {

void require_finite(double value, const char* what) {
    if (!std::isfinite(value)) {
        std::ostringstream os;
        os << what << " is " << value;
        throw NonFiniteLossError(os.str());
    }
}

}  // namespace

double supervised_step(Model& model, Adam& opt, const Batch& batch) {
    model.zero_grad();
    const auto fwd = model.forward(batch.x, nn::Mode::train);
    const auto ce = softmax_cross_entropy(fwd.logits, batch.y);
    require_finite(ce.loss, "supervised cross-entropy");
    model.backward(ce.grad, {});
    opt.step(model);
    return ce.loss;
}

StepLosses bidirectional_step(Model& dam, Adam& dam_opt, Model& ktm, Adam& ktm_opt, const Batch& batch,
                              const SkdSettings& skd) {
    if (!ktm.head_frozen()) throw ConfigError("bidirectional step: KTM head must be frozen");
    if (dam.spec().tap_layers != ktm.spec().tap_layers) {
        throw MismatchError("bidirectional step: DAM and KTM tap layers differ");
    }
    dam.zero_grad();
    ktm.zero_grad();
    auto fd = dam.forward(batch.x, nn::Mode::train);
    auto fk = ktm.forward(batch.x, nn::Mode::train);
    for (auto& f : fk.taps) f.tag = ModelTag::ktm;

    const auto ce_dam = softmax_cross_entropy(fd.logits, batch.y);
    const auto ce_ktm = softmax_cross_entropy(fk.logits, batch.y);

    StepLosses out;
    out.ce_dam = ce_dam.loss;
    out.ce_ktm = ce_ktm.loss;

    std::vector<Tensor> grad_dam, grad_ktm;
    if (skd.components.any() && skd.gamma != 0.0) {
        auto res = skd_total_loss(fd.taps, fk.taps, skd.masks, skd.components, skd.options, true);
        out.skd = res.loss;
        grad_dam = std::move(res.grad_dam);
        grad_ktm = std::move(res.grad_ktm);
        for (auto& g : grad_dam) g *= skd.gamma;
        for (auto& g : grad_ktm) g *= skd.gamma;
    }
    out.joint = out.ce_dam + skd.gamma * out.skd.total + out.ce_ktm;
    if (!std::isfinite(out.joint)) {
        std::ostringstream os;
        os << "joint loss is non-finite (ce_dam=" << out.ce_dam << ", ce_ktm=" << out.ce_ktm
           << ", skd=" << out.skd.total << " [B=" << out.skd.batch << " P=" << out.skd.pixel
           << " R=" << out.skd.region << "], gamma=" << skd.gamma << ")";
        throw NonFiniteLossError(os.str());
    }

    dam.backward(ce_dam.grad, grad_dam);
    ktm.backward(ce_ktm.grad, grad_ktm);
    dam_opt.step(dam);
    ktm_opt.step(ktm);
    return out;
}

std::string RoundReport::to_json(bool with_time) const {
    using nlohmann::json;
    json j;
    j["round"] = round;
    j["method"] = method;
    j["schedule"] = schedule;
    j["skd_active"] = skd_active;
    json arr = json::array();
    for (const auto& c : clients) {
        arr.push_back({{"client", c.client},
                       {"sender", c.sender},
                       {"self_consolidation", c.self_consolidation},
                       {"steps", c.steps},
                       {"ce_dam", c.mean.ce_dam},
                       {"ce_ktm", c.mean.ce_ktm},
                       {"skd_total", c.mean.skd.total},
                       {"skd_batch", c.mean.skd.batch},
                       {"skd_pixel", c.mean.skd.pixel},
                       {"skd_region", c.mean.skd.region},
                       {"joint", c.mean.joint}});
    }
    j["clients"] = std::move(arr);
    if (with_time) j["wall_seconds"] = wall_seconds;
    return j.dump();
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& f) {
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](std::size_t i) {
        try {
            f(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) guarded(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

namespace {

void accumulate(StepLosses& acc, const StepLosses& s) {
    acc.ce_dam += s.ce_dam;
    acc.ce_ktm += s.ce_ktm;
    acc.skd.total += s.skd.total;
    acc.skd.batch += s.skd.batch;
    acc.skd.pixel += s.skd.pixel;
    acc.skd.region += s.skd.region;
    acc.joint += s.joint;
}

void scale(StepLosses& acc, double k) {
    acc.ce_dam *= k;
    acc.ce_ktm *= k;
    acc.skd.total *= k;
    acc.skd.batch *= k;
    acc.skd.pixel *= k;
    acc.skd.region *= k;
    acc.joint *= k;
}

}  // namespace

RoundReport run_round(std::vector<ClientState>& clients, const TransferSchedule& schedule, const RoundConfig& cfg,
                      const RoundHooks& hooks) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = clients.size();
    if (schedule.size() != n) {
        throw MismatchError("run_round: schedule for " + std::to_string(schedule.size()) + " clients, have " +
                            std::to_string(n));
    }
    if (!schedule.is_bijection()) throw MismatchError("run_round: schedule is not a permutation");

    // Every clone is taken before anyone trains, so the outcome does not
    // depend on the order in which clients are processed.
    std::vector<std::optional<Model>> ktms(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (schedule.order[i] != i) ktms[i] = clone_model(clients[schedule.order[i]].dam);
    }

    SkdSettings skd = cfg.skd;
    if (!cfg.skd_active) skd.gamma = 0.0;

    RoundReport report;
    report.round = schedule.round;
    report.method = "fedskd";
    report.schedule = schedule.order;
    report.skd_active = cfg.skd_active;
    report.clients.resize(n);

    parallel_for(n, cfg.workers, [&](std::size_t i) {
        ClientState& c = clients[i];
        ClientRoundLog& log = report.clients[i];
        log.client = i;
        log.sender = schedule.order[i];
        log.self_consolidation = !ktms[i].has_value();
        log.steps = cfg.iters;
        if (log.self_consolidation) {
            for (std::size_t it = 0; it < cfg.iters; ++it) {
                const Batch b = c.next_batch();
                if (hooks.on_batch) hooks.on_batch(i, i);
                const double ce = self_consolidation_step(c.dam, c.optimizer, b);
                log.mean.ce_dam += ce;
                log.mean.joint += ce;
            }
        } else {
            Model& ktm = *ktms[i];
            set_head_frozen(ktm, true);
            if (hooks.on_receive) hooks.on_receive(i, ktm);
            Adam ktm_opt(cfg.lr);
            for (std::size_t it = 0; it < cfg.iters; ++it) {
                const Batch b = c.next_batch();
                if (hooks.on_batch) hooks.on_batch(i, i);
                accumulate(log.mean, bidirectional_step(c.dam, c.optimizer, ktm, ktm_opt, b, skd));
            }
            if (hooks.on_discard) hooks.on_discard(i, ktm);
            ktms[i].reset();
        }
        if (cfg.iters > 0) scale(log.mean, 1.0 / static_cast<double>(cfg.iters));
    });

    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

bool skd_active_in_round(std::size_t round, std::size_t total_rounds, double start_fraction) {
    return static_cast<double>(round) >= start_fraction * static_cast<double>(total_rounds);
}

void run_fedskd(std::vector<ClientState>& clients, const FedSkdSettings& settings, const RoundCallback& on_round,
                const RoundHooks& hooks) {
    for (std::size_t r = 0; r < settings.rounds; ++r) {
        const auto schedule = generate_schedule(clients.size(), r, settings.seed);
        RoundConfig cfg = settings.round;
        cfg.skd_active = skd_active_in_round(r, settings.rounds, settings.skd_start_fraction);
        const auto report = run_round(clients, schedule, cfg, hooks);
        if (on_round) on_round(report, clients);
    }
}

}  // namespace fedskd
