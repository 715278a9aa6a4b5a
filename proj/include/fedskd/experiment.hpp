#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedskd/config.hpp"
#include "fedskd/data.hpp"
#include "fedskd/model.hpp"
#include "fedskd/protocol.hpp"

namespace fedskd {

struct MetricRow {
    std::string method;
    std::size_t round = 0;
    std::size_t client = 0;
    std::string scope;  // "local" or "global"
    std::optional<double> auc;
    std::optional<double> fairness_gap;
    std::uint64_t seed = 0;
    std::size_t fold = 0;
};

std::string metrics_csv_header();
// Doubles as %.17g; undefined values are empty cells.
std::string format_metric_row(const MetricRow& row);

struct FoldData {
    std::vector<LabeledDataset> train;
    std::vector<LabeledDataset> test;
};

// Deterministic in (cfg, fold).
FoldData build_fold_data(const ExperimentConfig& cfg, std::size_t fold);

// nullopt when cfg.regions is "none".
std::optional<RegionMaskSet> build_region_masks(const ExperimentConfig& cfg);

enum class ScopeFilter { all, local, global };
ScopeFilter parse_scope(const std::string& text);

// Local rows carry the run-wide fairness gap when the test shards have a
// sensitive attribute.
std::vector<MetricRow> evaluate_models(std::vector<Model>& models, const std::vector<LabeledDataset>& tests,
                                       const ExperimentConfig& cfg, std::size_t round, std::size_t fold,
                                       ScopeFilter scope = ScopeFilter::all);

struct RunOptions {
    std::size_t workers = 1;
    RoundHooks hooks;
    // Per-round progress lines; null for silence.
    std::ostream* log = nullptr;
};

struct RunResult {
    std::vector<MetricRow> rows;
    std::vector<RoundReport> reports;
    // Final deployed model of every client, per fold.
    std::vector<std::vector<Model>> models;
};

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Output root: $FEDSKD_LAB_OUT if set, otherwise cfg.output_dir.
std::filesystem::path output_root(const ExperimentConfig& cfg);
// <root>/<YYYYmmdd-HHMMSS>-<hash16>, with a numeric suffix if taken.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const ExperimentConfig& cfg);

// Writes config.resolved, metrics.csv, rounds.jsonl and
// checkpoints/[fold<f>/]client<i>.ckpt into `dir`.
void write_run(const std::filesystem::path& dir, const ExperimentConfig& cfg, const RunResult& result);

// Reloads the final checkpoints of a run directory and recomputes the
// final-round metrics. Throws CheckpointError for a missing checkpoint.
std::vector<MetricRow> evaluate_run(const std::filesystem::path& dir, ScopeFilter scope = ScopeFilter::all);

// Mean and population std per (method, scope) over the final round; with
// several folds the std is taken over fold means.
void print_summary(std::ostream& os, const std::vector<MetricRow>& rows);

enum class AblationAxis { components, layers, timing };
AblationAxis parse_axis(const std::string& text);

struct AblationVariant {
    std::string name;
    ExperimentConfig config;
};

// components: the 7 non-empty subsets of {B, P, R}; layers: {4}, {3,4},
// {2,3,4}, {1,2,3,4}; timing: start fractions 0, .25, .5, .75.
std::vector<AblationVariant> ablation_variants(AblationAxis axis, const ExperimentConfig& base);

// Runs every variant into <dir>/<variant>/ and writes <dir>/summary.csv with
// the final-round rows prefixed by axis and variant.
void run_ablation(const std::filesystem::path& dir, AblationAxis axis, const ExperimentConfig& base,
                  const RunOptions& opts = {});

}  // namespace fedskd
