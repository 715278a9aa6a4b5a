#include "fedskd/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedskd/errors.hpp"

namespace fedskd {

std::string to_string(Method m) {
    switch (m) {
        case Method::fedskd: return "fedskd";
        case Method::fedcross: return "fedcross";
        case Method::fedcross_dagger: return "fedcross_dagger";
        case Method::fedavg: return "fedavg";
        case Method::fedprox: return "fedprox";
        case Method::fedbn: return "fedbn";
        case Method::local: return "local";
        case Method::centralized: return "centralized";
    }
    return "fedskd";
}

Method parse_method(const std::string& text) {
    for (Method m : {Method::fedskd, Method::fedcross, Method::fedcross_dagger, Method::fedavg, Method::fedprox,
                     Method::fedbn, Method::local, Method::centralized}) {
        if (to_string(m) == text) return m;
    }
    throw ConfigError("unknown method '" + text +
                      "' (expected fedskd, fedcross, fedcross_dagger, fedavg, fedprox, fedbn, local, centralized)");
}

bool is_server_method(Method m) { return m == Method::fedavg || m == Method::fedprox || m == Method::fedbn; }

std::size_t ExperimentConfig::effective_iters() const {
    if (iters_per_round > 0) return iters_per_round;
    return is_server_method(method) ? 5 : 5 * n_clients;
}

std::vector<ModelSpec> ExperimentConfig::fleet() const {
    ModelSpec base;
    base.family = family;
    base.base_width = base_width;
    base.num_classes = classes;
    base.input_shape = input_shape;
    base.tap_layers = tap_layers;
    return heterogeneous_fleet(n_clients, base, width_step);
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (n_clients < 1) fail("n_clients must be >= 1");
    if (!(gamma >= 0.0)) fail("gamma must be >= 0");
    if (!(skd_start_fraction >= 0.0 && skd_start_fraction < 1.0)) fail("skd_start_fraction must lie in [0, 1)");
    if (!(row_eps >= 0.0)) fail("row_eps must be >= 0");
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (folds < 1) fail("folds must be >= 1");
    if (folds == 1 && !(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction must lie in (0, 1)");
    if (classes < 2) fail("classes must be >= 2");
    if (partition == PartitionMethod::dirichlet && !(alpha > 0.0)) fail("alpha must be > 0");
    if (!(prox_mu >= 0.0)) fail("prox_mu must be >= 0");
    if (dataset == DatasetKind::manifest && manifest.empty()) fail("dataset = manifest needs a manifest path");
    if (dataset == DatasetKind::synthetic && samples_per_client < 2) fail("samples_per_client must be >= 2");
    if (tap_layers.empty()) fail("tap_layers must not be empty");
    if (components.region && regions == "none") fail("region SKD enabled but regions = none");
    try {
        for (const auto& spec : fleet()) spec.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) out.push_back(trim(item));
    return out;
}

template <typename T>
T parse_int(const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, out);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, out);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError("expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

struct Key {
    const char* name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Key>& keys() {
    using C = ExperimentConfig;
    static const std::vector<Key> table = {
        {"method", [](C& c, const std::string& v) { c.method = parse_method(v); },
         [](const C& c) { return to_string(c.method); }},
        {"n_clients", [](C& c, const std::string& v) { c.n_clients = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.n_clients); }},
        {"model.family",
         [](C& c, const std::string& v) {
             try {
                 c.family = parse_model_family(v);
             } catch (const Error& e) {
                 throw ConfigError(e.what());
             }
         },
         [](const C& c) { return to_string(c.family); }},
        {"model.base_width", [](C& c, const std::string& v) { c.base_width = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.base_width); }},
        {"model.width_step", [](C& c, const std::string& v) { c.width_step = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.width_step); }},
        {"model.input_shape",
         [](C& c, const std::string& v) {
             Shape s;
             for (const auto& part : split(v, ',')) s.push_back(parse_int<std::size_t>(part));
             if (s.size() != 3 && s.size() != 4) throw ConfigError("input_shape must be c,h,w or c,d,h,w");
             c.input_shape = s;
         },
         [](const C& c) { return join(c.input_shape); }},
        {"rounds", [](C& c, const std::string& v) { c.rounds = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.rounds); }},
        {"iters_per_round",
         [](C& c, const std::string& v) { c.iters_per_round = v == "auto" ? 0 : parse_int<std::size_t>(v); },
         [](const C& c) { return c.iters_per_round == 0 ? std::string("auto") : std::to_string(c.iters_per_round); }},
        {"gamma", [](C& c, const std::string& v) { c.gamma = parse_double(v); },
         [](const C& c) { return fmt_double(c.gamma); }},
        {"skd.components", [](C& c, const std::string& v) { c.components = SkdComponents::parse(v); },
         [](const C& c) { return c.components.to_string(); }},
        {"skd.layers",
         [](C& c, const std::string& v) {
             std::vector<int> layers;
             for (const auto& part : split(v, ',')) layers.push_back(parse_int<int>(part));
             if (layers.empty() || !std::is_sorted(layers.begin(), layers.end()) ||
                 std::adjacent_find(layers.begin(), layers.end()) != layers.end() || layers.front() < 1 ||
                 layers.back() > 4) {
                 throw ConfigError("skd.layers must be an ascending subset of 1,2,3,4");
             }
             c.tap_layers = layers;
         },
         [](const C& c) { return join(c.tap_layers); }},
        {"skd.start_fraction", [](C& c, const std::string& v) { c.skd_start_fraction = parse_double(v); },
         [](const C& c) { return fmt_double(c.skd_start_fraction); }},
        {"skd.row_eps", [](C& c, const std::string& v) { c.row_eps = parse_double(v); },
         [](const C& c) { return fmt_double(c.row_eps); }},
        {"skd.pixel_norm_literal", [](C& c, const std::string& v) { c.pixel_norm_literal = parse_bool(v); },
         [](const C& c) { return std::string(c.pixel_norm_literal ? "true" : "false"); }},
        {"skd.regions", [](C& c, const std::string& v) { c.regions = v; }, [](const C& c) { return c.regions; }},
        {"partition",
         [](C& c, const std::string& v) {
             if (v == "dirichlet") c.partition = PartitionMethod::dirichlet;
             else if (v == "stratified") c.partition = PartitionMethod::stratified;
             else if (v == "iid") c.partition = PartitionMethod::iid;
             else throw ConfigError("unknown partition '" + v + "' (expected dirichlet, stratified, iid)");
         },
         [](const C& c) { return to_string(c.partition); }},
        {"partition.alpha", [](C& c, const std::string& v) { c.alpha = parse_double(v); },
         [](const C& c) { return fmt_double(c.alpha); }},
        {"partition.site_map", [](C& c, const std::string& v) { c.site_map = v; },
         [](const C& c) { return c.site_map; }},
        {"dataset",
         [](C& c, const std::string& v) {
             if (v == "synthetic") c.dataset = DatasetKind::synthetic;
             else if (v == "manifest") c.dataset = DatasetKind::manifest;
             else throw ConfigError("unknown dataset '" + v + "' (expected synthetic or manifest)");
         },
         [](const C& c) { return std::string(c.dataset == DatasetKind::synthetic ? "synthetic" : "manifest"); }},
        {"data.manifest", [](C& c, const std::string& v) { c.manifest = v; }, [](const C& c) { return c.manifest; }},
        {"data.classes", [](C& c, const std::string& v) { c.classes = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.classes); }},
        {"data.samples_per_client",
         [](C& c, const std::string& v) { c.samples_per_client = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.samples_per_client); }},
        {"data.shift", [](C& c, const std::string& v) { c.shift = parse_double(v); },
         [](const C& c) { return fmt_double(c.shift); }},
        {"data.signal", [](C& c, const std::string& v) { c.signal = parse_double(v); },
         [](const C& c) { return fmt_double(c.signal); }},
        {"data.noise", [](C& c, const std::string& v) { c.noise = parse_double(v); },
         [](const C& c) { return fmt_double(c.noise); }},
        {"data.nuisance", [](C& c, const std::string& v) { c.nuisance = parse_double(v); },
         [](const C& c) { return fmt_double(c.nuisance); }},
        {"data.test_fraction", [](C& c, const std::string& v) { c.test_fraction = parse_double(v); },
         [](const C& c) { return fmt_double(c.test_fraction); }},
        {"lr", [](C& c, const std::string& v) { c.lr = parse_double(v); },
         [](const C& c) { return fmt_double(c.lr); }},
        {"batch_size", [](C& c, const std::string& v) { c.batch_size = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.batch_size); }},
        {"seed", [](C& c, const std::string& v) { c.seed = parse_int<std::uint64_t>(v); },
         [](const C& c) { return std::to_string(c.seed); }},
        {"folds", [](C& c, const std::string& v) { c.folds = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.folds); }},
        {"fedprox.mu", [](C& c, const std::string& v) { c.prox_mu = parse_double(v); },
         [](const C& c) { return fmt_double(c.prox_mu); }},
        {"fedcross.replicas", [](C& c, const std::string& v) { c.fedcross_replicas = parse_bool(v); },
         [](const C& c) { return std::string(c.fedcross_replicas ? "true" : "false"); }},
        {"eval_every", [](C& c, const std::string& v) { c.eval_every = parse_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.eval_every); }},
        {"output_dir", [](C& c, const std::string& v) { c.output_dir = v; },
         [](const C& c) { return c.output_dir; }},
    };
    return table;
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
        if (key == k.name) {
            try {
                k.set(cfg, value);
            } catch (const ConfigError& e) {
                throw ConfigError("key '" + key + "': " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
        try {
            set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.string());
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("--set " + o + ": expected key=value");
        try {
            set_config_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("--set " + o + ": " + e.what());
        }
    }
}

std::string snapshot(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : snapshot(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace fedskd
