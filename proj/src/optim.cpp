#include "fedskd/optim.hpp"

#include <algorithm>
#include <cmath>

#include "fedskd/errors.hpp"

namespace fedskd {

Tensor softmax(const Tensor& logits) {
    Tensor p(logits.shape());
    const std::size_t b = logits.dim(0);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = logits.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] = std::exp(row[j] - mx) / z;
    }
    return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw MismatchError("cross entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                            std::to_string(labels.size()) + " labels");
    }
    const std::size_t b = logits.dim(0);
    const std::size_t k = logits.dim(1);
    CrossEntropy ce;
    ce.grad = softmax(logits);
    for (std::size_t i = 0; i < b; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (labels[i] < 0 || y >= k) throw MismatchError("cross entropy: label " + std::to_string(labels[i]) + " out of range");
        const double* row = logits.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        ce.loss += std::log(z) + mx - row[y];
        ce.grad[i * k + y] -= 1.0;
    }
    ce.loss /= static_cast<double>(b);
    ce.grad *= 1.0 / static_cast<double>(b);
    return ce;
}

void Adam::step(Model& model) {
    auto& store = model.params();
    if (m_.empty()) {
        for (const auto& p : store) {
            m_.emplace_back(p.value.shape());
            v_.emplace_back(p.value.shape());
        }
    }
    if (m_.size() != store.size()) throw MismatchError("adam: optimizer state belongs to a different model");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store[i];
        if (!nn::is_trainable(p.role)) continue;
        if (p.head && model.head_frozen()) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            p.value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

}  // namespace fedskd
