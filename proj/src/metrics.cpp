#include "fedskd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fedskd/errors.hpp"

namespace fedskd {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw MismatchError("auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y != 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw SingleClassError("auc: labels contain a single class");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of mid-ranks (1-based) of the positives.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0) rank_sum += mid;
        }
        i = j + 1;
    }
    const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double multiclass_auc(const Tensor& scores, std::span<const int> labels) {
    if (scores.rank() != 2 || scores.dim(0) != labels.size()) {
        throw MismatchError("multiclass auc: scores " + shape_to_string(scores.shape()) + " vs " +
                            std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = labels.size();
    const std::size_t k = scores.dim(1);
    std::vector<std::size_t> present(k, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw MismatchError("multiclass auc: label out of range");
        ++present[static_cast<std::size_t>(y)];
    }
    double total = 0.0;
    std::size_t used = 0;
    std::vector<double> column(n);
    std::vector<int> one_vs_rest(n);
    for (std::size_t c = 0; c < k; ++c) {
        if (present[c] == 0 || present[c] == n) continue;
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = scores[i * k + c];
            one_vs_rest[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
        }
        total += auc(column, one_vs_rest);
        ++used;
    }
    if (used == 0) throw SingleClassError("multiclass auc: labels contain a single class");
    return total / static_cast<double>(used);
}

Tensor score_samples(Model& model, const LabeledDataset& ds, std::size_t batch_size) {
    const std::size_t n = ds.size();
    const std::size_t k = model.spec().num_classes;
    const bool binary = k == 2;
    Tensor out(binary ? Shape{n} : Shape{n, k});
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<std::size_t> rows(stop - start);
        std::iota(rows.begin(), rows.end(), start);
        const Tensor logits = model.forward(gather_rows(ds.inputs, rows), nn::Mode::eval).logits;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* row = logits.data() + i * k;
            if (binary) {
                out[start + i] = row[1] - row[0];
                continue;
            }
            const double mx = *std::max_element(row, row + k);
            double z = 0.0;
            for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
            const double lse = mx + std::log(z);
            for (std::size_t j = 0; j < k; ++j) out[(start + i) * k + j] = row[j] - lse;
        }
    }
    return out;
}

double score_auc(const Tensor& scores, std::span<const int> labels) {
    if (scores.rank() == 1) {
        std::vector<int> positive(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) positive[i] = labels[i] == 1 ? 1 : 0;
        return auc(scores.values(), positive);
    }
    return multiclass_auc(scores, labels);
}

std::optional<double> model_auc(Model& model, const LabeledDataset& ds) {
    if (ds.size() == 0) return std::nullopt;
    try {
        return score_auc(score_samples(model, ds), ds.labels);
    } catch (const SingleClassError&) {
        return std::nullopt;
    }
}

ScopeSummary summarize(std::vector<std::optional<double>> per_client) {
    ScopeSummary s;
    s.per_client = std::move(per_client);
    double sum = 0.0;
    for (const auto& v : s.per_client) {
        if (v) {
            sum += *v;
            ++s.defined;
        }
    }
    if (s.defined == 0) {
        s.mean = std::nan("");
        s.stddev = std::nan("");
        return s;
    }
    s.mean = sum / static_cast<double>(s.defined);
    double sq = 0.0;
    for (const auto& v : s.per_client) {
        if (v) sq += (*v - s.mean) * (*v - s.mean);
    }
    s.stddev = std::sqrt(sq / static_cast<double>(s.defined));
    return s;
}

AucMatrix evaluate_auc_matrix(std::span<Model> models, std::span<const LabeledDataset> tests, bool all_pairs) {
    if (models.size() != tests.size()) throw MismatchError("evaluation: one test shard per model required");
    AucMatrix m(models.size(), std::vector<std::optional<double>>(tests.size()));
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = 0; j < tests.size(); ++j) {
            if (all_pairs || i == j) m[i][j] = model_auc(models[i], tests[j]);
        }
    }
    return m;
}

ScopeSummary local_test(const AucMatrix& aucs) {
    std::vector<std::optional<double>> per_client;
    for (std::size_t i = 0; i < aucs.size(); ++i) per_client.push_back(aucs[i][i]);
    return summarize(std::move(per_client));
}

ScopeSummary local_test(std::span<Model> models, std::span<const LabeledDataset> tests) {
    return local_test(evaluate_auc_matrix(models, tests, false));
}

ScopeSummary global_test(const AucMatrix& aucs) {
    std::vector<std::optional<double>> per_client;
    for (const auto& row : aucs) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& v : row) {
            if (v) {
                sum += *v;
                ++count;
            }
        }
        per_client.push_back(count ? std::optional<double>(sum / static_cast<double>(count)) : std::nullopt);
    }
    return summarize(std::move(per_client));
}

ScopeSummary global_test(std::span<Model> models, std::span<const LabeledDataset> tests) {
    return global_test(evaluate_auc_matrix(models, tests, true));
}

FairnessResult fairness_gap_from_aucs(std::vector<std::optional<double>> auc_attr1,
                                      std::vector<std::optional<double>> auc_attr0) {
    if (auc_attr1.size() != auc_attr0.size()) throw MismatchError("fairness gap: subgroup lists differ in length");
    FairnessResult r;
    for (std::size_t k = 0; k < auc_attr1.size(); ++k) {
        if (!auc_attr1[k] || !auc_attr0[k]) r.excluded.push_back(k);
    }
    const ScopeSummary a = summarize(auc_attr1);
    const ScopeSummary b = summarize(auc_attr0);
    if (a.defined > 0 && b.defined > 0) r.gap = std::abs(a.mean - b.mean);
    r.auc_attr1 = std::move(auc_attr1);
    r.auc_attr0 = std::move(auc_attr0);
    return r;
}

FairnessResult fairness_gap(std::span<Model> models, std::span<const LabeledDataset> tests) {
    if (models.size() != tests.size()) throw MismatchError("fairness gap: one test shard per model required");
    std::vector<std::optional<double>> g1, g0;
    for (std::size_t k = 0; k < models.size(); ++k) {
        const auto& ds = tests[k];
        if (!ds.has_attr()) throw MissingAttrError("fairness gap: test shard " + std::to_string(k) + " has no attribute");
        const Tensor scores = score_samples(models[k], ds);
        for (int group : {1, 0}) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (ds.sensitive_attr[i] == group) rows.push_back(i);
            }
            std::optional<double> value;
            if (!rows.empty()) {
                const Tensor sub = gather_rows(scores, rows);
                std::vector<int> labels;
                for (auto r : rows) labels.push_back(ds.labels[r]);
                try {
                    value = score_auc(sub, labels);
                } catch (const SingleClassError&) {
                    value.reset();
                }
            }
            (group == 1 ? g1 : g0).push_back(value);
        }
    }
    auto result = fairness_gap_from_aucs(std::move(g1), std::move(g0));
    for (auto k : result.excluded) {
        std::clog << "fairness gap: client " << k << " excluded from a subgroup mean (single-class subgroup)\n";
    }
    return result;
}

}  // namespace fedskd
