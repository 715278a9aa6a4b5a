#include "fedskd/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "fedskd/baselines.hpp"
#include "fedskd/errors.hpp"
#include "fedskd/metrics.hpp"

namespace fedskd {

namespace fs = std::filesystem;

std::string metrics_csv_header() { return "method,round,client,scope,auc,fairness_gap,seed,fold"; }

namespace {

std::string fmt17(const std::optional<double>& v) {
    if (!v) return {};
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

std::vector<std::size_t> parse_grid(const std::string& text) {
    std::vector<std::size_t> grid;
    std::istringstream is(text);
    std::string part;
    while (std::getline(is, part, 'x')) {
        try {
            std::size_t used = 0;
            const auto v = std::stoul(part, &used);
            if (used != part.size() || v == 0) throw ConfigError("");
            grid.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("skd.regions: bad grid '" + text + "'");
        }
    }
    return grid;
}

std::map<int, std::size_t> parse_site_map(const std::string& text, const LabeledDataset& ds, std::size_t n) {
    std::map<int, std::size_t> out;
    if (text.empty()) {
        const std::set<int> sites(ds.site_labels.begin(), ds.site_labels.end());
        if (sites.size() != n) {
            throw ConfigError("partition = stratified: " + std::to_string(sites.size()) + " sites for " +
                              std::to_string(n) + " clients; set partition.site_map");
        }
        std::size_t k = 0;
        for (int s : sites) out[s] = k++;
        return out;
    }
    std::istringstream is(text);
    std::string pair;
    while (std::getline(is, pair, ',')) {
        const auto colon = pair.find(':');
        try {
            if (colon == std::string::npos) throw std::invalid_argument("");
            const int site = std::stoi(pair.substr(0, colon));
            const auto client = static_cast<std::size_t>(std::stoul(pair.substr(colon + 1)));
            if (client >= n) throw std::invalid_argument("");
            out[site] = client;
        } catch (const std::exception&) {
            throw ConfigError("partition.site_map: bad entry '" + pair + "'");
        }
    }
    return out;
}

}  // namespace

std::string format_metric_row(const MetricRow& r) {
    return r.method + "," + std::to_string(r.round) + "," + std::to_string(r.client) + "," + r.scope + "," +
           fmt17(r.auc) + "," + fmt17(r.fairness_gap) + "," + std::to_string(r.seed) + "," + std::to_string(r.fold);
}

FoldData build_fold_data(const ExperimentConfig& cfg, std::size_t fold) {
    std::vector<LabeledDataset> shards;
    if (cfg.dataset == DatasetKind::synthetic) {
        SyntheticTaskSpec spec;
        spec.n_clients = cfg.n_clients;
        spec.classes = cfg.classes;
        spec.per_client_shift = cfg.shift;
        spec.input_shape = cfg.input_shape;
        spec.samples_per_client = cfg.samples_per_client;
        spec.label_alpha = cfg.partition == PartitionMethod::dirichlet ? cfg.alpha : 0.0;
        spec.signal = cfg.signal;
        spec.noise = cfg.noise;
        spec.nuisance = cfg.nuisance;
        spec.seed = cfg.seed;
        shards = make_synthetic_task(spec);
    } else {
        const LabeledDataset ds = load_manifest_dataset(cfg.manifest);
        if (ds.sample_shape() != cfg.input_shape) {
            throw ConfigError("manifest samples have shape " + shape_to_string(ds.sample_shape()) +
                              " but model.input_shape is " + shape_to_string(cfg.input_shape));
        }
        if (ds.num_classes() > cfg.classes) {
            throw ConfigError("manifest has " + std::to_string(ds.num_classes()) + " classes, data.classes is " +
                              std::to_string(cfg.classes));
        }
        const std::uint64_t pseed = derive_seed(cfg.seed, SeedPurpose::partition, 0);
        PartitionPlan plan;
        switch (cfg.partition) {
            case PartitionMethod::dirichlet:
                plan = dirichlet_partition(ds, cfg.n_clients, cfg.alpha, pseed);
                break;
            case PartitionMethod::stratified:
                plan = stratified_partition(ds, parse_site_map(cfg.site_map, ds, cfg.n_clients));
                break;
            case PartitionMethod::iid:
                plan = iid_partition(ds.size(), cfg.n_clients, pseed);
                break;
        }
        if (plan.n_clients != cfg.n_clients) {
            throw ConfigError("partition produced " + std::to_string(plan.n_clients) + " clients, n_clients is " +
                              std::to_string(cfg.n_clients));
        }
        shards = plan.shards(ds);
    }
    FoldData out;
    for (std::size_t i = 0; i < shards.size(); ++i) {
        const std::uint64_t sseed = derive_seed(cfg.seed, SeedPurpose::split, i);
        auto split = cfg.folds > 1 ? fold_split(shards[i], cfg.folds, fold, sseed)
                                   : stratified_split(shards[i], cfg.test_fraction, sseed);
        out.train.push_back(std::move(split.train));
        out.test.push_back(std::move(split.test));
    }
    return out;
}

std::optional<RegionMaskSet> build_region_masks(const ExperimentConfig& cfg) {
    if (cfg.regions == "none") return std::nullopt;
    const Shape spatial(cfg.input_shape.begin() + 1, cfg.input_shape.end());
    if (cfg.regions.rfind("grid:", 0) == 0) {
        const auto grid = parse_grid(cfg.regions.substr(5));
        if (grid.size() != spatial.size()) {
            throw ConfigError("skd.regions: grid rank " + std::to_string(grid.size()) + " vs input rank " +
                              std::to_string(spatial.size()));
        }
        return make_grid_region_masks(spatial, grid);
    }
    auto masks = load_region_masks(cfg.regions);
    if (masks.spatial.size() != spatial.size()) {
        throw ConfigError("skd.regions: mask rank does not match the input rank");
    }
    return masks;
}

ScopeFilter parse_scope(const std::string& text) {
    if (text == "all") return ScopeFilter::all;
    if (text == "local") return ScopeFilter::local;
    if (text == "global") return ScopeFilter::global;
    throw ConfigError("unknown scope '" + text + "' (expected all, local, global)");
}

std::vector<MetricRow> evaluate_models(std::vector<Model>& models, const std::vector<LabeledDataset>& tests,
                                       const ExperimentConfig& cfg, std::size_t round, std::size_t fold,
                                       ScopeFilter scope) {
    const bool want_global = scope != ScopeFilter::local;
    const bool want_local = scope != ScopeFilter::global;
    const AucMatrix m = evaluate_auc_matrix(models, tests, want_global);
    std::optional<double> gap;
    bool has_attr = true;
    for (const auto& t : tests) has_attr = has_attr && t.has_attr();
    if (want_local && has_attr) gap = fairness_gap(models, tests).gap;

    std::vector<MetricRow> rows;
    const std::string method = to_string(cfg.method);
    if (want_local) {
        const auto local = local_test(m);
        for (std::size_t i = 0; i < models.size(); ++i) {
            rows.push_back({method, round, i, "local", local.per_client[i], gap, cfg.seed, fold});
        }
    }
    if (want_global) {
        const auto global = global_test(m);
        for (std::size_t i = 0; i < models.size(); ++i) {
            rows.push_back({method, round, i, "global", global.per_client[i], std::nullopt, cfg.seed, fold});
        }
    }
    return rows;
}

namespace {

std::vector<Model> deployed_models(const std::vector<ClientState>& clients) {
    std::vector<Model> out;
    for (const auto& c : clients) out.push_back(clone_model(c.dam));
    return out;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    if (cfg.method == Method::fedcross && cfg.fedcross_replicas && cfg.width_step != 0 && cfg.n_clients > 1) {
        throw ConfigError("fedcross.replicas needs a homogeneous fleet (model.width_step = 0)");
    }
    const auto specs = cfg.fleet();
    const auto masks = cfg.components.region ? build_region_masks(cfg) : std::nullopt;
    const std::size_t iters = cfg.effective_iters();

    RunResult result;
    for (std::size_t fold = 0; fold < cfg.folds; ++fold) {
        FoldData data = build_fold_data(cfg, fold);
        const std::vector<LabeledDataset> tests = data.test;
        auto clients = make_clients(specs, std::move(data.train), std::move(data.test), cfg.lr, cfg.batch_size, cfg.seed);

        auto on_round = [&](const RoundReport& report, std::vector<ClientState>& cs) {
            RoundReport r = report;
            r.method = to_string(cfg.method);
            if (opts.log) {
                double ce = 0.0;
                for (const auto& c : r.clients) ce += c.mean.ce_dam;
                *opts.log << r.method << " fold " << fold << " round " << r.round + 1 << "/" << cfg.rounds
                          << " mean CE " << ce / static_cast<double>(std::max<std::size_t>(r.clients.size(), 1))
                          << " (" << r.wall_seconds << " s)\n";
            }
            result.reports.push_back(std::move(r));
            const std::size_t done = report.round + 1;
            const bool due = done == cfg.rounds || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
            if (due) {
                auto models = deployed_models(cs);
                auto rows = evaluate_models(models, tests, cfg, done, fold);
                result.rows.insert(result.rows.end(), rows.begin(), rows.end());
            }
        };

        BaselineSettings bs;
        bs.rounds = cfg.rounds;
        bs.iters = iters;
        bs.lr = cfg.lr;
        bs.batch_size = cfg.batch_size;
        bs.seed = cfg.seed;
        bs.prox_mu = cfg.prox_mu;
        bs.workers = opts.workers;

        switch (cfg.method) {
            case Method::fedskd: {
                FedSkdSettings fs;
                fs.rounds = cfg.rounds;
                fs.skd_start_fraction = cfg.skd_start_fraction;
                fs.seed = cfg.seed;
                fs.round.iters = iters;
                fs.round.lr = cfg.lr;
                fs.round.workers = opts.workers;
                fs.round.skd.gamma = cfg.gamma;
                fs.round.skd.components = cfg.components;
                fs.round.skd.masks = masks ? &*masks : nullptr;
                fs.round.skd.options.row_eps = cfg.row_eps;
                fs.round.skd.options.pixel_norm_literal = cfg.pixel_norm_literal;
                run_fedskd(clients, fs, on_round, opts.hooks);
                break;
            }
            case Method::local: run_local(clients, bs, on_round, opts.hooks); break;
            case Method::centralized: run_centralized(clients, bs, on_round, opts.hooks); break;
            case Method::fedavg: run_server_method(ServerMethod::fedavg, clients, bs, on_round, opts.hooks); break;
            case Method::fedprox: run_server_method(ServerMethod::fedprox, clients, bs, on_round, opts.hooks); break;
            case Method::fedbn: run_server_method(ServerMethod::fedbn, clients, bs, on_round, opts.hooks); break;
            case Method::fedcross:
                if (cfg.fedcross_replicas) {
                    run_fedcross_dagger(clients, bs, on_round, opts.hooks);
                } else {
                    run_fedcross(clients, bs, on_round, opts.hooks);
                }
                break;
            case Method::fedcross_dagger: run_fedcross_dagger(clients, bs, on_round, opts.hooks); break;
        }
        if (cfg.rounds == 0) {
            auto models = deployed_models(clients);
            auto rows = evaluate_models(models, tests, cfg, 0, fold);
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
        }
        result.models.push_back(deployed_models(clients));
    }
    return result;
}

fs::path output_root(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("FEDSKD_LAB_OUT"); env != nullptr && *env != '\0') return env;
    return cfg.output_dir;
}

fs::path make_run_dir(const fs::path& root, const ExperimentConfig& cfg) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    const std::string base = std::string(stamp) + "-" + hash;
    fs::create_directories(root);
    fs::path dir = root / base;
    for (int k = 2; !fs::create_directory(dir); ++k) dir = root / (base + "-" + std::to_string(k));
    return dir;
}

namespace {

fs::path checkpoint_path(const fs::path& dir, const ExperimentConfig& cfg, std::size_t fold, std::size_t client) {
    fs::path p = dir / "checkpoints";
    if (cfg.folds > 1) p /= "fold" + std::to_string(fold);
    return p / ("client" + std::to_string(client) + ".ckpt");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
}

}  // namespace

void write_run(const fs::path& dir, const ExperimentConfig& cfg, const RunResult& result) {
    fs::create_directories(dir);
    write_text(dir / "config.resolved", snapshot(cfg));

    std::string csv = metrics_csv_header() + "\n";
    for (const auto& r : result.rows) csv += format_metric_row(r) + "\n";
    write_text(dir / "metrics.csv", csv);

    std::string jsonl;
    for (const auto& r : result.reports) jsonl += r.to_json() + "\n";
    write_text(dir / "rounds.jsonl", jsonl);

    for (std::size_t f = 0; f < result.models.size(); ++f) {
        for (std::size_t i = 0; i < result.models[f].size(); ++i) {
            const auto path = checkpoint_path(dir, cfg, f, i);
            fs::create_directories(path.parent_path());
            save_checkpoint(result.models[f][i], path);
        }
    }
}

std::vector<MetricRow> evaluate_run(const fs::path& dir, ScopeFilter scope) {
    const auto cfg = load_config(dir / "config.resolved");
    std::vector<MetricRow> rows;
    for (std::size_t fold = 0; fold < cfg.folds; ++fold) {
        const FoldData data = build_fold_data(cfg, fold);
        std::vector<Model> models;
        for (std::size_t i = 0; i < cfg.n_clients; ++i) {
            const auto path = checkpoint_path(dir, cfg, fold, i);
            if (!fs::exists(path)) throw CheckpointError("missing checkpoint " + path.string());
            models.push_back(load_checkpoint(path));
        }
        auto r = evaluate_models(models, data.test, cfg, cfg.rounds, fold, scope);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    return rows;
}

void print_summary(std::ostream& os, const std::vector<MetricRow>& rows) {
    std::size_t last = 0;
    for (const auto& r : rows) last = std::max(last, r.round);
    // (method, scope) -> fold -> values
    std::map<std::pair<std::string, std::string>, std::map<std::size_t, std::vector<double>>> groups;
    std::map<std::pair<std::string, std::size_t>, double> gaps;
    for (const auto& r : rows) {
        if (r.round != last) continue;
        if (r.auc) groups[{r.method, r.scope}][r.fold].push_back(*r.auc);
        if (r.fairness_gap) gaps[{r.method, r.fold}] = *r.fairness_gap;
    }
    auto mean_std = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::pair{m, std::sqrt(s / static_cast<double>(v.size()))};
    };
    for (const auto& [key, folds] : groups) {
        std::vector<double> fold_means;
        std::vector<double> pooled;
        for (const auto& [f, v] : folds) {
            fold_means.push_back(mean_std(v).first);
            pooled.insert(pooled.end(), v.begin(), v.end());
        }
        const auto [m, s] = folds.size() > 1 ? mean_std(fold_means) : mean_std(pooled);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s %s AUC (round %zu): %.4f +- %.4f", key.first.c_str(), key.second.c_str(),
                      last, m, s);
        os << buf << "\n";
    }
    for (const auto& [key, g] : gaps) {
        char buf[120];
        std::snprintf(buf, sizeof buf, "%s fold %zu fairness gap: %.4f", key.first.c_str(), key.second, g);
        os << buf << "\n";
    }
}

AblationAxis parse_axis(const std::string& text) {
    if (text == "components") return AblationAxis::components;
    if (text == "layers") return AblationAxis::layers;
    if (text == "timing") return AblationAxis::timing;
    throw ConfigError("unknown ablation axis '" + text + "' (expected components, layers, timing)");
}

std::vector<AblationVariant> ablation_variants(AblationAxis axis, const ExperimentConfig& base) {
    std::vector<AblationVariant> out;
    switch (axis) {
        case AblationAxis::components:
            for (const char* c : {"B", "P", "R", "BP", "BR", "PR", "BPR"}) {
                ExperimentConfig cfg = base;
                cfg.components = SkdComponents::parse(c);
                out.push_back({c, cfg});
            }
            break;
        case AblationAxis::layers: {
            const std::vector<std::vector<int>> sets{{4}, {3, 4}, {2, 3, 4}, {1, 2, 3, 4}};
            for (const auto& s : sets) {
                ExperimentConfig cfg = base;
                cfg.tap_layers = s;
                std::string name = "L";
                for (int l : s) name += std::to_string(l);
                out.push_back({name, cfg});
            }
            break;
        }
        case AblationAxis::timing:
            for (const auto& [name, f] : std::vector<std::pair<std::string, double>>{
                     {"start0", 0.0}, {"start0.25", 0.25}, {"start0.5", 0.5}, {"start0.75", 0.75}}) {
                ExperimentConfig cfg = base;
                cfg.skd_start_fraction = f;
                out.push_back({name, cfg});
            }
            break;
    }
    return out;
}

void run_ablation(const fs::path& dir, AblationAxis axis, const ExperimentConfig& base, const RunOptions& opts) {
    const auto variants = ablation_variants(axis, base);
    for (const auto& v : variants) v.config.validate();
    fs::create_directories(dir);
    const char* axis_name = axis == AblationAxis::components ? "components"
                            : axis == AblationAxis::layers   ? "layers"
                                                             : "timing";
    std::string summary = "axis,variant," + metrics_csv_header() + "\n";
    for (const auto& v : variants) {
        if (opts.log) *opts.log << "ablation " << axis_name << ": variant " << v.name << "\n";
        const RunResult result = run_experiment(v.config, opts);
        write_run(dir / v.name, v.config, result);
        for (const auto& r : result.rows) {
            if (r.round != v.config.rounds) continue;
            summary += std::string(axis_name) + "," + v.name + "," + format_metric_row(r) + "\n";
        }
    }
    write_text(dir / "summary.csv", summary);
}

}  // namespace fedskd
