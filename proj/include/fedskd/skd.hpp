#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedskd/region_masks.hpp"
#include "fedskd/tensor.hpp"

namespace fedskd {

enum class ModelTag { dam, ktm };

// Activations of one model at one tap layer: (b, c, s1, ..., sd), d in {2, 3}.
struct FeatureMap {
    Tensor values;
    int layer_id = 0;
    ModelTag tag = ModelTag::dam;

    std::size_t batch() const { return values.dim(0); }
    std::size_t channels() const { return values.dim(1); }
    Shape spatial() const { return spatial_shape(values.shape()); }
    void validate() const;
};

enum class SimilarityKind { batch, pixel, region };
std::string to_string(SimilarityKind kind);

// sqrt(n) * rownorm(H H^T). Rows have norm sqrt(n); the matrix is generally
// not symmetric.
struct SimilarityMatrix {
    Eigen::MatrixXd values;
    SimilarityKind kind = SimilarityKind::batch;
    int layer_id = 0;
    // Spatial grid the pixel similarity was computed on; empty otherwise.
    Shape spatial;

    std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
};

struct SkdOptions {
    // 0 means strict: a Gram row with norm below 1e-12 raises ZeroRowError.
    // A positive value divides by max(norm, row_eps) instead.
    double row_eps = 0.0;
    // Normalize the pixel loss by n * s_last (the literal "h w^2" reading)
    // instead of n^2.
    bool pixel_norm_literal = false;
};

// Which of batch (B), pixel (P) and region (R) terms are active.
struct SkdComponents {
    bool batch = false;
    bool pixel = false;
    bool region = false;

    static SkdComponents all() { return {true, true, true}; }
    static SkdComponents none() { return {}; }
    // Parses strings like "B,P,R", "BP", "none". Throws ConfigError.
    static SkdComponents parse(const std::string& text);
    std::string to_string() const;
    bool any() const { return batch || pixel || region; }
    friend bool operator==(const SkdComponents&, const SkdComponents&) = default;
};

inline constexpr double kZeroRowEpsilon = 1e-12;

// --- similarity kernels -------------------------------------------------

Eigen::MatrixXd gram_row_normalized(const Eigen::MatrixXd& rows, double row_eps = 0.0);

// Gradient of a scalar loss w.r.t. `rows`, given its gradient w.r.t. the
// output of gram_row_normalized(rows).
Eigen::MatrixXd gram_row_normalized_backward(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& grad_out,
                                             double row_eps = 0.0);

// (b, c, s...) -> b x (c * prod(s)).
Eigen::MatrixXd batch_rows(const Tensor& features);
// (b, c, s...) -> prod(s) x (b * c); column index is batch * c + channel.
Eigen::MatrixXd pixel_rows(const Tensor& features);
// r x (b * c) per-region means. `masks` must already match the spatial shape.
Eigen::MatrixXd region_rows(const Tensor& features, const RegionMaskSet& masks);

// Adjoints of the reshapes above.
Tensor batch_rows_backward(const Eigen::MatrixXd& grad, const Shape& shape);
Tensor pixel_rows_backward(const Eigen::MatrixXd& grad, const Shape& shape);
Tensor region_rows_backward(const Eigen::MatrixXd& grad, const Shape& shape, const RegionMaskSet& masks);

SimilarityMatrix batch_similarity(const FeatureMap& f, const SkdOptions& opts = {});
// Resamples f to target_spatial (bilinear/trilinear) first when needed.
SimilarityMatrix pixel_similarity(const FeatureMap& f, const Shape& target_spatial, const SkdOptions& opts = {});
// Pools per region after nearest-neighbour resampling of masks to f's grid.
Eigen::MatrixXd region_pool(const FeatureMap& f, const RegionMaskSet& masks);
SimilarityMatrix region_similarity(const FeatureMap& f, const RegionMaskSet& masks, const SkdOptions& opts = {});

// --- losses ---------------------------------------------------------------

// (1/|L|) sum_l ||A_l - B_l||_F^2 / norm_l with norm_l = n_l^2 (or the literal
// pixel normalizer when requested).
double skd_component_loss(std::span<const SimilarityMatrix> a, std::span<const SimilarityMatrix> b,
                          const SkdOptions& opts = {});

struct ComponentGrad {
    std::vector<Eigen::MatrixXd> grad_a;
    std::vector<Eigen::MatrixXd> grad_b;
};
ComponentGrad skd_component_loss_backward(std::span<const SimilarityMatrix> a, std::span<const SimilarityMatrix> b,
                                          const SkdOptions& opts = {});

struct SkdLoss {
    double total = 0.0;
    double batch = 0.0;
    double pixel = 0.0;
    double region = 0.0;
};

struct SkdResult {
    SkdLoss loss;
    // Gradients w.r.t. each input feature map (empty unless requested).
    std::vector<Tensor> grad_dam;
    std::vector<Tensor> grad_ktm;
};

// Sum of the enabled component losses over all tap layers. Pixel terms align
// the KTM features to the DAM's spatial grid at every layer.
SkdResult skd_total_loss(std::span<const FeatureMap> dam, std::span<const FeatureMap> ktm,
                         const RegionMaskSet* masks, SkdComponents enabled, const SkdOptions& opts = {},
                         bool with_grad = false);

}  // namespace fedskd
