#include "fedskd/skd.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "fedskd/errors.hpp"
#include "fedskd/resample.hpp"

namespace fedskd {
namespace {

void require_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw NonFiniteError(std::string(what) + ": non-finite input");
}

double row_denominator(double norm, double row_eps) {
    if (row_eps > 0.0) return std::max(norm, row_eps);
    if (norm < kZeroRowEpsilon) {
        throw ZeroRowError("similarity: Gram row norm " + std::to_string(norm) +
                           " below 1e-12 (all-zero feature vector)");
    }
    return norm;
}

std::size_t plane_stride(const Shape& shape) { return spatial_numel(shape); }

double loss_normalizer(const SimilarityMatrix& s, const SkdOptions& opts) {
    const auto n = static_cast<double>(s.n());
    if (s.kind == SimilarityKind::pixel && opts.pixel_norm_literal && !s.spatial.empty()) {
        return n * static_cast<double>(s.spatial.back());
    }
    return n * n;
}

void check_pair(std::span<const SimilarityMatrix> a, std::span<const SimilarityMatrix> b) {
    if (a.empty() || a.size() != b.size()) {
        throw MismatchError("skd loss: layer lists of length " + std::to_string(a.size()) + " and " +
                            std::to_string(b.size()));
    }
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].kind != b[l].kind) throw MismatchError("skd loss: similarity kinds differ at layer index " + std::to_string(l));
        if (a[l].values.rows() != b[l].values.rows() || a[l].values.cols() != b[l].values.cols()) {
            throw MismatchError("skd loss: similarity sizes differ at layer index " + std::to_string(l));
        }
    }
}

}  // namespace

void FeatureMap::validate() const {
    const auto rank = values.rank();
    if (rank != 4 && rank != 5) {
        throw ShapeRankError("feature map: expected (b, c, s...) with 2 or 3 spatial dims, got " +
                             shape_to_string(values.shape()));
    }
    if (values.numel() == 0) throw ShapeRankError("feature map: empty tensor " + shape_to_string(values.shape()));
    if (!values.all_finite()) throw NonFiniteError("feature map: non-finite activation at layer " + std::to_string(layer_id));
}

std::string to_string(SimilarityKind kind) {
    switch (kind) {
        case SimilarityKind::batch: return "batch";
        case SimilarityKind::pixel: return "pixel";
        case SimilarityKind::region: return "region";
    }
    return "unknown";
}

SkdComponents SkdComponents::parse(const std::string& text) {
    SkdComponents c;
    std::string lowered;
    for (char ch : text) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (lowered == "none" || lowered.empty()) return c;
    for (char ch : text) {
        switch (std::toupper(static_cast<unsigned char>(ch))) {
            case 'B': c.batch = true; break;
            case 'P': c.pixel = true; break;
            case 'R': c.region = true; break;
            case ',': case ' ': case '+': break;
            default: throw ConfigError("unknown SKD component '" + std::string(1, ch) + "' in '" + text + "'");
        }
    }
    return c;
}

std::string SkdComponents::to_string() const {
    std::string s;
    if (batch) s += "B";
    if (pixel) s += "P";
    if (region) s += "R";
    return s.empty() ? "none" : s;
}

Eigen::MatrixXd gram_row_normalized(const Eigen::MatrixXd& rows, double row_eps) {
    if (rows.rows() < 1 || rows.cols() < 1) throw MismatchError("similarity: empty feature matrix");
    require_finite(rows, "similarity");
    const Eigen::MatrixXd gram = rows * rows.transpose();
    const double scale = std::sqrt(static_cast<double>(rows.rows()));
    Eigen::MatrixXd out(gram.rows(), gram.cols());
    for (Eigen::Index i = 0; i < gram.rows(); ++i) {
        const double denom = row_denominator(gram.row(i).norm(), row_eps);
        out.row(i) = gram.row(i) * (scale / denom);
    }
    return out;
}

Eigen::MatrixXd gram_row_normalized_backward(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& grad_out,
                                             double row_eps) {
    const Eigen::MatrixXd gram = rows * rows.transpose();
    const double scale = std::sqrt(static_cast<double>(rows.rows()));
    Eigen::MatrixXd grad_gram(gram.rows(), gram.cols());
    for (Eigen::Index i = 0; i < gram.rows(); ++i) {
        const double norm = gram.row(i).norm();
        const double denom = row_denominator(norm, row_eps);
        if (denom == norm) {
            // d(g / |g|) = (I - g g^T / |g|^2) / |g|
            const double proj = grad_out.row(i).dot(gram.row(i));
            grad_gram.row(i) = scale * (grad_out.row(i) / norm - gram.row(i) * (proj / (norm * norm * norm)));
        } else {
            grad_gram.row(i) = grad_out.row(i) * (scale / denom);
        }
    }
    return (grad_gram + grad_gram.transpose()) * rows;
}

Eigen::MatrixXd batch_rows(const Tensor& features) {
    const auto b = static_cast<Eigen::Index>(features.dim(0));
    const auto m = static_cast<Eigen::Index>(trailing_numel(features.shape()));
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(features.data(), b, m);
}

Tensor batch_rows_backward(const Eigen::MatrixXd& grad, const Shape& shape) {
    Tensor out(shape);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), grad.rows(),
                                                                                       grad.cols()) = grad;
    return out;
}

Eigen::MatrixXd pixel_rows(const Tensor& features) {
    const std::size_t planes = features.dim(0) * features.dim(1);
    const std::size_t n = plane_stride(features.shape());
    // Each (batch, channel) plane is one column.
    return Eigen::Map<const Eigen::MatrixXd>(features.data(), static_cast<Eigen::Index>(n),
                                             static_cast<Eigen::Index>(planes));
}

Tensor pixel_rows_backward(const Eigen::MatrixXd& grad, const Shape& shape) {
    Tensor out(shape);
    Eigen::Map<Eigen::MatrixXd>(out.data(), grad.rows(), grad.cols()) = grad;
    return out;
}

Eigen::MatrixXd region_rows(const Tensor& features, const RegionMaskSet& masks) {
    const Shape sp = spatial_shape(features.shape());
    if (sp != masks.spatial) {
        throw MismatchError("region pool: masks " + shape_to_string(masks.spatial) + " vs features " + shape_to_string(sp));
    }
    const auto sizes = masks.region_sizes();
    for (int k = 0; k < masks.regions; ++k) {
        if (sizes[k] == 0) throw EmptyRegionError("region pool: region " + std::to_string(k + 1) + " is empty");
    }
    const std::size_t planes = features.dim(0) * features.dim(1);
    const std::size_t n = sp.empty() ? 0 : shape_numel(sp);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(masks.regions, static_cast<Eigen::Index>(planes));
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = features.data() + p * n;
        for (std::size_t i = 0; i < n; ++i) {
            const int id = masks.assignments[i];
            if (id > 0) out(id - 1, static_cast<Eigen::Index>(p)) += src[i];
        }
    }
    for (int k = 0; k < masks.regions; ++k) out.row(k) /= static_cast<double>(sizes[k]);
    return out;
}

Tensor region_rows_backward(const Eigen::MatrixXd& grad, const Shape& shape, const RegionMaskSet& masks) {
    Tensor out(shape);
    const auto sizes = masks.region_sizes();
    const std::size_t planes = shape[0] * shape[1];
    const std::size_t n = plane_stride(shape);
    for (std::size_t p = 0; p < planes; ++p) {
        double* dst = out.data() + p * n;
        for (std::size_t i = 0; i < n; ++i) {
            const int id = masks.assignments[i];
            if (id > 0) dst[i] = grad(id - 1, static_cast<Eigen::Index>(p)) / static_cast<double>(sizes[id - 1]);
        }
    }
    return out;
}

SimilarityMatrix batch_similarity(const FeatureMap& f, const SkdOptions& opts) {
    f.validate();
    return {gram_row_normalized(batch_rows(f.values), opts.row_eps), SimilarityKind::batch, f.layer_id, {}};
}

SimilarityMatrix pixel_similarity(const FeatureMap& f, const Shape& target_spatial, const SkdOptions& opts) {
    f.validate();
    if (target_spatial.size() != f.spatial().size()) {
        throw ShapeRankError("pixel similarity: target " + shape_to_string(target_spatial) + " vs feature spatial " +
                             shape_to_string(f.spatial()));
    }
    const Tensor aligned = resample_linear(f.values, target_spatial);
    return {gram_row_normalized(pixel_rows(aligned), opts.row_eps), SimilarityKind::pixel, f.layer_id, target_spatial};
}

Eigen::MatrixXd region_pool(const FeatureMap& f, const RegionMaskSet& masks) {
    f.validate();
    return region_rows(f.values, resample_masks(masks, f.spatial()));
}

SimilarityMatrix region_similarity(const FeatureMap& f, const RegionMaskSet& masks, const SkdOptions& opts) {
    return {gram_row_normalized(region_pool(f, masks), opts.row_eps), SimilarityKind::region, f.layer_id, {}};
}

double skd_component_loss(std::span<const SimilarityMatrix> a, std::span<const SimilarityMatrix> b,
                          const SkdOptions& opts) {
    check_pair(a, b);
    double total = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l) {
        total += (a[l].values - b[l].values).squaredNorm() / loss_normalizer(a[l], opts);
    }
    return total / static_cast<double>(a.size());
}

ComponentGrad skd_component_loss_backward(std::span<const SimilarityMatrix> a, std::span<const SimilarityMatrix> b,
                                          const SkdOptions& opts) {
    check_pair(a, b);
    ComponentGrad g;
    const auto layers = static_cast<double>(a.size());
    for (std::size_t l = 0; l < a.size(); ++l) {
        Eigen::MatrixXd d = (a[l].values - b[l].values) * (2.0 / (loss_normalizer(a[l], opts) * layers));
        g.grad_b.push_back(-d);
        g.grad_a.push_back(std::move(d));
    }
    return g;
}

SkdResult skd_total_loss(std::span<const FeatureMap> dam, std::span<const FeatureMap> ktm, const RegionMaskSet* masks,
                         SkdComponents enabled, const SkdOptions& opts, bool with_grad) {
    if (dam.empty() || dam.size() != ktm.size()) {
        throw MismatchError("skd: DAM and KTM tap lists differ in length (" + std::to_string(dam.size()) + " vs " +
                            std::to_string(ktm.size()) + ")");
    }
    if (enabled.region && masks == nullptr) throw MissingMasksError("skd: region term enabled without region masks");

    const std::size_t layers = dam.size();
    for (std::size_t l = 0; l < layers; ++l) {
        dam[l].validate();
        ktm[l].validate();
        if (dam[l].layer_id != ktm[l].layer_id) {
            throw MismatchError("skd: tap layer " + std::to_string(dam[l].layer_id) + " paired with " +
                                std::to_string(ktm[l].layer_id));
        }
        if (dam[l].batch() != ktm[l].batch()) {
            throw MismatchError("skd: batch sizes differ at layer " + std::to_string(dam[l].layer_id));
        }
        if (dam[l].spatial().size() != ktm[l].spatial().size()) {
            throw ShapeRankError("skd: spatial ranks differ at layer " + std::to_string(dam[l].layer_id));
        }
    }

    SkdResult result;
    if (with_grad) {
        for (std::size_t l = 0; l < layers; ++l) {
            result.grad_dam.emplace_back(dam[l].values.shape());
            result.grad_ktm.emplace_back(ktm[l].values.shape());
        }
    }

    if (enabled.batch) {
        std::vector<Eigen::MatrixXd> hd, hk;
        std::vector<SimilarityMatrix> sd, sk;
        for (std::size_t l = 0; l < layers; ++l) {
            hd.push_back(batch_rows(dam[l].values));
            hk.push_back(batch_rows(ktm[l].values));
            sd.push_back({gram_row_normalized(hd[l], opts.row_eps), SimilarityKind::batch, dam[l].layer_id, {}});
            sk.push_back({gram_row_normalized(hk[l], opts.row_eps), SimilarityKind::batch, ktm[l].layer_id, {}});
        }
        result.loss.batch = skd_component_loss(sd, sk, opts);
        if (with_grad) {
            const auto g = skd_component_loss_backward(sd, sk, opts);
            for (std::size_t l = 0; l < layers; ++l) {
                result.grad_dam[l] += batch_rows_backward(gram_row_normalized_backward(hd[l], g.grad_a[l], opts.row_eps),
                                                          dam[l].values.shape());
                result.grad_ktm[l] += batch_rows_backward(gram_row_normalized_backward(hk[l], g.grad_b[l], opts.row_eps),
                                                          ktm[l].values.shape());
            }
        }
    }

    if (enabled.pixel) {
        std::vector<Tensor> aligned;
        std::vector<Eigen::MatrixXd> hd, hk;
        std::vector<SimilarityMatrix> sd, sk;
        for (std::size_t l = 0; l < layers; ++l) {
            const Shape target = dam[l].spatial();
            aligned.push_back(resample_linear(ktm[l].values, target));
            hd.push_back(pixel_rows(dam[l].values));
            hk.push_back(pixel_rows(aligned[l]));
            sd.push_back({gram_row_normalized(hd[l], opts.row_eps), SimilarityKind::pixel, dam[l].layer_id, target});
            sk.push_back({gram_row_normalized(hk[l], opts.row_eps), SimilarityKind::pixel, ktm[l].layer_id, target});
        }
        result.loss.pixel = skd_component_loss(sd, sk, opts);
        if (with_grad) {
            const auto g = skd_component_loss_backward(sd, sk, opts);
            for (std::size_t l = 0; l < layers; ++l) {
                result.grad_dam[l] += pixel_rows_backward(gram_row_normalized_backward(hd[l], g.grad_a[l], opts.row_eps),
                                                          dam[l].values.shape());
                const Tensor grad_aligned = pixel_rows_backward(
                    gram_row_normalized_backward(hk[l], g.grad_b[l], opts.row_eps), aligned[l].shape());
                result.grad_ktm[l] += resample_linear_backward(grad_aligned, ktm[l].values.shape());
            }
        }
    }

    if (enabled.region) {
        std::vector<RegionMaskSet> md, mk;
        std::vector<Eigen::MatrixXd> hd, hk;
        std::vector<SimilarityMatrix> sd, sk;
        for (std::size_t l = 0; l < layers; ++l) {
            md.push_back(resample_masks(*masks, dam[l].spatial()));
            mk.push_back(resample_masks(*masks, ktm[l].spatial()));
            hd.push_back(region_rows(dam[l].values, md[l]));
            hk.push_back(region_rows(ktm[l].values, mk[l]));
            sd.push_back({gram_row_normalized(hd[l], opts.row_eps), SimilarityKind::region, dam[l].layer_id, {}});
            sk.push_back({gram_row_normalized(hk[l], opts.row_eps), SimilarityKind::region, ktm[l].layer_id, {}});
        }
        result.loss.region = skd_component_loss(sd, sk, opts);
        if (with_grad) {
            const auto g = skd_component_loss_backward(sd, sk, opts);
            for (std::size_t l = 0; l < layers; ++l) {
                result.grad_dam[l] += region_rows_backward(
                    gram_row_normalized_backward(hd[l], g.grad_a[l], opts.row_eps), dam[l].values.shape(), md[l]);
                result.grad_ktm[l] += region_rows_backward(
                    gram_row_normalized_backward(hk[l], g.grad_b[l], opts.row_eps), ktm[l].values.shape(), mk[l]);
            }
        }
    }

    result.loss.total = result.loss.batch + result.loss.pixel + result.loss.region;
    return result;
}

}  // namespace fedskd
