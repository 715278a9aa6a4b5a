#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedskd/data.hpp"
#include "fedskd/model.hpp"

namespace fedskd {

// Mann-Whitney U / (n_pos * n_neg) with mid-ranks, so ties count 1/2.
// Throws SingleClassError when the labels hold one class only.
double auc(std::span<const double> scores, std::span<const int> labels);

// Macro one-vs-rest AUC over the classes present in `labels`. scores is
// (N, C). Throws SingleClassError when fewer than two classes are present.
double multiclass_auc(const Tensor& scores, std::span<const int> labels);

// Per-sample scores used for ranking: logit(1) - logit(0) for binary models,
// log-softmax columns otherwise. Eval-mode forward in mini-batches.
Tensor score_samples(Model& model, const LabeledDataset& ds, std::size_t batch_size = 64);

// AUC of a score matrix from score_samples against labels.
double score_auc(const Tensor& scores, std::span<const int> labels);

// AUC of `model` on `ds`; nullopt when the shard is single-class.
std::optional<double> model_auc(Model& model, const LabeledDataset& ds);

struct ScopeSummary {
    std::vector<std::optional<double>> per_client;
    double mean = 0.0;
    // Population standard deviation over clients with a defined value.
    double stddev = 0.0;
    std::size_t defined = 0;
};

ScopeSummary summarize(std::vector<std::optional<double>> per_client);

// aucs[i][j]: model i on test shard j; nullopt when undefined.
using AucMatrix = std::vector<std::vector<std::optional<double>>>;

// Fills the full matrix when `all_pairs`, otherwise only the diagonal.
AucMatrix evaluate_auc_matrix(std::span<Model> models, std::span<const LabeledDataset> tests, bool all_pairs);

// Each model on its own shard.
ScopeSummary local_test(const AucMatrix& aucs);
ScopeSummary local_test(std::span<Model> models, std::span<const LabeledDataset> tests);

// Each model on every shard; the per-model score is the unweighted mean over
// shards with a defined AUC, independent of shard sizes.
ScopeSummary global_test(const AucMatrix& aucs);
ScopeSummary global_test(std::span<Model> models, std::span<const LabeledDataset> tests);

struct FairnessResult {
    // nullopt when no client contributes to one of the subgroup means.
    std::optional<double> gap;
    std::vector<std::optional<double>> auc_attr1;
    std::vector<std::optional<double>> auc_attr0;
    // Clients left out of at least one subgroup mean (single-class subgroup).
    std::vector<std::size_t> excluded;
};

// |mean_k AUC_{attr=1}^k - mean_k AUC_{attr=0}^k|; each mean skips clients
// whose value is nullopt.
FairnessResult fairness_gap_from_aucs(std::vector<std::optional<double>> auc_attr1,
                                      std::vector<std::optional<double>> auc_attr0);

// Subgroup AUCs of each model on its own test shard. Throws MissingAttrError
// when a shard carries no sensitive attribute.
FairnessResult fairness_gap(std::span<Model> models, std::span<const LabeledDataset> tests);

}  // namespace fedskd
