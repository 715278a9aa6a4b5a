#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedskd/data.hpp"
#include "fedskd/model.hpp"
#include "fedskd/skd.hpp"

namespace fedskd {

enum class Method { fedskd, fedcross, fedcross_dagger, fedavg, fedprox, fedbn, local, centralized };
std::string to_string(Method m);
Method parse_method(const std::string& text);
bool is_server_method(Method m);

enum class DatasetKind { synthetic, manifest };

// Plain "key = value" lines; '#' starts a comment. Every key is optional and
// unknown keys are rejected. See configs/desk.cfg for the full list.
struct ExperimentConfig {
    Method method = Method::fedskd;
    std::size_t n_clients = 3;

    ModelFamily family = ModelFamily::tinycnn;
    std::size_t base_width = 16;
    std::size_t width_step = 2;
    Shape input_shape{1, 16, 16};

    std::size_t rounds = 30;
    // 0 means the default: 5 * n_clients, or 5 for server-based methods.
    std::size_t iters_per_round = 0;
    double gamma = 1.0;
    SkdComponents components = SkdComponents::all();
    std::vector<int> tap_layers{1, 2, 3, 4};
    double skd_start_fraction = 0.0;
    double row_eps = 0.0;
    bool pixel_norm_literal = false;
    // "grid:AxB[xC]" over the input grid, a mask file path, or "none".
    std::string regions = "grid:2x2";

    PartitionMethod partition = PartitionMethod::dirichlet;
    double alpha = 0.5;
    // "site:client,site:client"; empty maps the sorted distinct sites to 0..N-1.
    std::string site_map;

    DatasetKind dataset = DatasetKind::synthetic;
    std::string manifest;
    std::size_t classes = 2;
    std::size_t samples_per_client = 80;
    double shift = 0.5;
    double signal = 1.0;
    double noise = 1.0;
    double nuisance = 0.5;
    double test_fraction = 0.2;

    double lr = 1e-4;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    std::size_t folds = 1;
    double prox_mu = 0.01;
    bool fedcross_replicas = false;
    // Evaluate every k rounds (0: final round only). The final round is
    // always evaluated.
    std::size_t eval_every = 0;
    std::string output_dir = "runs";

    std::size_t effective_iters() const;
    std::vector<ModelSpec> fleet() const;
    // Throws ConfigError describing the first invalid field.
    void validate() const;
};

// Sets one key from its text value; throws ConfigError naming the key.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// `origin` prefixes error messages ("file.cfg:12: ...").
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies "key=value" overrides in order.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

// Every key with its resolved value, one per line, in a fixed order.
// parse_config(snapshot(c)) reproduces c.
std::string snapshot(const ExperimentConfig& cfg);

// FNV-1a 64 over the snapshot text.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace fedskd
