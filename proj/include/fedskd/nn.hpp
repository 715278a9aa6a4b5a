#pragma once

// Minimal layer set with explicit backward passes. Layers are value types that
// refer to their parameters by index into a ParamStore, so copying a model
// (layers + store) yields an independent deep copy.

#include <string>
#include <variant>
#include <vector>

#include "fedskd/rng.hpp"
#include "fedskd/tensor.hpp"

namespace fedskd::nn {

enum class ParamRole { weight, bias, bn_weight, bn_bias, bn_running_mean, bn_running_var };

bool is_batchnorm(ParamRole role);
bool is_trainable(ParamRole role);

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    ParamRole role = ParamRole::weight;
    bool head = false;
};

class ParamStore {
public:
    std::size_t add(std::string name, Tensor value, ParamRole role, bool head = false);

    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }
    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();

private:
    std::vector<Param> params_;
};

enum class Mode { train, eval };

// Convolution without bias over 2 or 3 spatial dims (2D is run as 3D with a
// unit depth axis). Square/cubic kernel, symmetric padding.
struct Conv {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    std::size_t dims = 2;
    std::size_t weight = 0;
    bool input_grad = true;

    Shape cached_input;
    std::vector<double> cached_cols;

    static Conv make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                     std::size_t stride, std::size_t padding, std::size_t dims, CounterRng& rng);
    Shape output_shape(const Shape& input) const;
    Tensor forward(ParamStore& store, const Tensor& x, Mode mode);
    Tensor backward(ParamStore& store, const Tensor& grad_out);
};

struct BatchNorm {
    std::size_t channels = 0;
    std::size_t weight = 0;
    std::size_t bias = 0;
    std::size_t running_mean = 0;
    std::size_t running_var = 0;
    double momentum = 0.1;
    double eps = 1e-5;

    Tensor cached_xhat;
    std::vector<double> cached_inv_std;

    static BatchNorm make(ParamStore& store, const std::string& name, std::size_t channels);
    Tensor forward(ParamStore& store, const Tensor& x, Mode mode);
    Tensor backward(ParamStore& store, const Tensor& grad_out);
};

struct Relu {
    std::vector<unsigned char> cached_mask;

    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

// Max pooling, kernel 3, stride 2, padding 1 (ResNet stem).
struct MaxPool {
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;

    Shape cached_input;
    std::vector<std::size_t> cached_argmax;

    Shape output_shape(const Shape& input) const;
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

// conv-bn-relu-conv-bn plus identity or 1x1 conv-bn shortcut, then relu.
struct BasicBlock {
    Conv conv1;
    BatchNorm bn1;
    Relu relu1;
    Conv conv2;
    BatchNorm bn2;
    bool projection = false;
    Conv short_conv;
    BatchNorm short_bn;
    Relu relu_out;

    static BasicBlock make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                           std::size_t stride, std::size_t dims, CounterRng& rng);
    Tensor forward(ParamStore& store, const Tensor& x, Mode mode);
    Tensor backward(ParamStore& store, const Tensor& grad_out);
};

using Layer = std::variant<Conv, BatchNorm, Relu, MaxPool, BasicBlock>;

struct Stage {
    std::vector<Layer> layers;

    Tensor forward(ParamStore& store, const Tensor& x, Mode mode);
    Tensor backward(ParamStore& store, const Tensor& grad_out);
};

// (b, c, s...) -> (b, c)
struct GlobalAvgPool {
    Shape cached_input;

    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);
};

struct Linear {
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    std::size_t weight = 0;
    std::size_t bias = 0;

    Tensor cached_input;

    static Linear make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, CounterRng& rng,
                       bool head);
    Tensor forward(ParamStore& store, const Tensor& x, Mode mode);
    Tensor backward(ParamStore& store, const Tensor& grad_out);
};

}  // namespace fedskd::nn
