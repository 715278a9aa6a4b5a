#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedskd/region_masks.hpp"
#include "fedskd/tensor.hpp"

namespace fedskd {

struct LabeledDataset {
    Tensor inputs;                   // (N, c_in, s...)
    std::vector<int> labels;         // 0..C-1
    std::vector<int> sensitive_attr; // binary, empty when absent
    std::vector<int> site_labels;    // empty when absent

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const;
    Shape sample_shape() const;
    bool has_attr() const { return !sensitive_attr.empty(); }
    bool has_sites() const { return !site_labels.empty(); }
    void validate() const;

    LabeledDataset subset(std::span<const std::size_t> rows) const;
    std::vector<std::size_t> class_counts(std::size_t classes) const;
};

LabeledDataset concat(std::span<const LabeledDataset> parts);

enum class PartitionMethod { dirichlet, stratified, iid };
std::string to_string(PartitionMethod method);

struct PartitionPlan {
    std::vector<std::size_t> assignment;  // client per sample
    std::size_t n_clients = 0;
    PartitionMethod method = PartitionMethod::iid;

    // Throws EmptyClientError if a client has no samples.
    void validate(std::size_t n_samples) const;
    std::vector<std::size_t> client_sizes() const;
    std::vector<std::size_t> rows_of(std::size_t client) const;
    std::vector<LabeledDataset> shards(const LabeledDataset& ds) const;
};

inline constexpr int kDirichletRedraws = 100;

// Per class c (ascending): p_c ~ Dir(alpha * 1), counts by largest remainder
// (floor(p * n_c), leftovers to the largest fractional parts, lower client
// index first on ties). A draw that leaves any client empty is redrawn from
// the same stream, up to kDirichletRedraws attempts. Sample placement then
// shuffles each class's rows and hands out consecutive blocks to clients
// 0, 1, ... in order.
PartitionPlan dirichlet_partition(const LabeledDataset& ds, std::size_t n_clients, double alpha, std::uint64_t seed);
PartitionPlan dirichlet_partition_labels(std::span<const int> labels, std::size_t n_classes, std::size_t n_clients,
                                         double alpha, std::uint64_t seed);

// Fixed per-class proportions (rows of `proportions` are classes). Same
// rounding and placement as the Dirichlet partitioner; no redraws, so an
// empty client raises EmptyClientError.
PartitionPlan partition_by_proportions(std::span<const int> labels, const std::vector<std::vector<double>>& proportions,
                                       std::uint64_t seed);

// Largest-remainder rounding of proportions to integer counts summing to n.
std::vector<std::size_t> largest_remainder_counts(std::span<const double> proportions, std::size_t n);

// Each sample follows its site's client.
PartitionPlan stratified_partition(const LabeledDataset& ds, const std::map<int, std::size_t>& site_to_client);

// Shuffle then deal round-robin.
PartitionPlan iid_partition(std::size_t n_samples, std::size_t n_clients, std::uint64_t seed);

struct TrainTestSplit {
    LabeledDataset train;
    LabeledDataset test;
};

// Per class: shuffle, put round(test_fraction * n) rows into test (kept within
// 1..n-1 when n >= 2). Rows keep their original order inside each split.
TrainTestSplit stratified_split(const LabeledDataset& ds, double test_fraction, std::uint64_t seed);

// Per class: shuffle, fold of the j-th shuffled row is j mod k.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed);
TrainTestSplit fold_split(const LabeledDataset& ds, std::size_t k, std::size_t fold, std::uint64_t seed);

struct SyntheticTaskSpec {
    std::size_t n_clients = 3;
    std::size_t classes = 2;
    double per_client_shift = 0.5;
    Shape input_shape{1, 16, 16};
    std::size_t samples_per_client = 80;
    // <= 0: labels spread evenly over clients; > 0: Dirichlet label skew.
    double label_alpha = 0.0;
    double signal = 1.0;
    double noise = 1.0;
    double nuisance = 0.5;
    std::uint64_t seed = 0;
};

// Class-conditional images: a class-specific Gaussian blob template with a
// random per-sample amplitude, white Gaussian noise, and a nuisance blob
// switched on by the binary sensitive attribute. Client k applies
//   x' = gain_k * x + offset_k + shift * texture_k
// with gain_k = exp(shift * z1), offset_k = shift * z2 and a client-specific
// sinusoidal texture, so shift = 0 gives identically distributed clients.
// Site labels record the client index.
std::vector<LabeledDataset> make_synthetic_task(const SyntheticTaskSpec& spec);

// r = prod(grid) axis-aligned blocks; along axis a, position i falls into
// block floor(i * g_a / s_a). Ids are row-major over blocks, starting at 1.
RegionMaskSet make_grid_region_masks(const Shape& spatial, const std::vector<std::size_t>& grid);

// CSV manifest with header "path,label,attr,site"; attr/site may be empty for
// every row. Each path (relative to the manifest) is a text array file:
//   shape <c> <s1> ... <sd>
//   <values, row-major, whitespace separated>
LabeledDataset load_manifest_dataset(const std::filesystem::path& manifest);
void save_array_file(const Tensor& sample, const std::filesystem::path& path);

}  // namespace fedskd
