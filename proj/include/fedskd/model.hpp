#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedskd/nn.hpp"
#include "fedskd/skd.hpp"
#include "fedskd/tensor.hpp"

namespace fedskd {

enum class ModelFamily { resnet10, tinycnn };

std::string to_string(ModelFamily family);
ModelFamily parse_model_family(const std::string& text);

struct ModelSpec {
    ModelFamily family = ModelFamily::tinycnn;
    std::size_t base_width = 16;
    std::size_t num_classes = 2;
    // (c_in, s1, ..., sd), d in {2, 3}.
    Shape input_shape{1, 16, 16};
    // Ordered subset of {1, 2, 3, 4}.
    std::vector<int> tap_layers{1, 2, 3, 4};

    void validate() const;
    std::string describe() const;
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Heterogeneous iff family or base width differ.
bool heterogeneous(const ModelSpec& a, const ModelSpec& b);

struct NamedTensor {
    std::string name;
    Tensor value;
    nn::ParamRole role = nn::ParamRole::weight;
};
using ParamCollection = std::vector<NamedTensor>;

struct ForwardResult {
    Tensor logits;
    std::vector<FeatureMap> taps;
};

// Four stages (each ending at a tap point), global average pooling and a
// single linear prediction header.
//
//   resnet10: stage1 = conv7/s2 + bn + relu + maxpool3/s2 + basic block(w)
//             stage2..4 = basic block (2w, 4w, 8w), stride 2
//             tap l has spatial ceil(S / 2^(l+1))
//   tinycnn:  stage1 = conv3/s1 (w), stage2 = conv3/s2 (w),
//             stage3 = conv3/s2 (2w), stage4 = conv3/s2 (2w), each + bn + relu
//             tap l has spatial ceil(S / 2^(l-1))
//
// Batch-norm layers belong to the feature extractor; only the final linear
// layer is the header.
class Model {
public:
    Model() = default;
    Model(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    bool head_frozen() const { return head_frozen_; }
    void set_head_frozen(bool frozen) { head_frozen_ = frozen; }

    // Train mode caches activations for backward and uses batch statistics.
    ForwardResult forward(const Tensor& x, nn::Mode mode);
    // grad_taps is either empty or aligned with spec().tap_layers.
    void backward(const Tensor& grad_logits, std::span<const Tensor> grad_taps);
    void zero_grad() { store_.zero_grad(); }

    std::size_t parameter_count() const;
    ParamCollection named_parameters() const;
    // Overwrites values by name; entries rejected by `accept` are skipped.
    // Throws SchemaMismatchError on unknown names or shape mismatch.
    void load_parameters(const ParamCollection& params, bool (*accept)(nn::ParamRole) = nullptr);

private:
    ModelSpec spec_;
    nn::ParamStore store_;
    std::vector<nn::Stage> stages_;
    nn::GlobalAvgPool pool_;
    nn::Linear head_;
    bool head_frozen_ = false;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);
// Client i (0-based) gets base.base_width - step * i.
std::vector<ModelSpec> heterogeneous_fleet(std::size_t n_clients, const ModelSpec& base, std::size_t step);
Model clone_model(const Model& m);
void set_head_frozen(Model& m, bool frozen);

// Spatial shape emitted at tap `layer` for the given input spatial shape.
Shape tap_spatial(const ModelSpec& spec, int layer);

// Checkpoint archive, version 1:
//   FEDSKD-CKPT 1\n
//   spec <family> <base_width> <num_classes> <rank> <dims...> <n_taps> <taps...>\n
//   head_frozen <0|1>\n
//   params <count>\n
//   then per parameter: "<name> <role> <rank> <dims...>\n" followed by
//   numel little-endian IEEE-754 doubles and a trailing "\n".
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace fedskd
