#pragma once

#include <span>
#include <vector>

#include "fedskd/model.hpp"

namespace fedskd {

struct CrossEntropy {
    double loss = 0.0;
    // d loss / d logits, already divided by the batch size.
    Tensor grad;
};

// Mean softmax cross-entropy over the batch.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Softmax probabilities, row-wise.
Tensor softmax(const Tensor& logits);

// Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected). State is keyed by
// parameter index, so an instance belongs to exactly one model. Header
// parameters are skipped while the model's head is frozen; batch-norm running
// statistics are never stepped.
class Adam {
public:
    explicit Adam(double lr = 1e-4) : lr_(lr) {}

    void step(Model& model);
    double learning_rate() const { return lr_; }
    long steps() const { return t_; }

private:
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace fedskd
