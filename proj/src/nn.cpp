#include "fedskd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "fedskd/errors.hpp"

namespace fedskd::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// Spatial geometry of a conv or pool with a unit depth axis for 2D inputs.
struct Geometry {
    std::size_t channels = 0;
    std::size_t in[3] = {1, 1, 1};
    std::size_t out[3] = {1, 1, 1};
    std::size_t k[3] = {1, 1, 1};
    std::size_t s[3] = {1, 1, 1};
    std::size_t p[3] = {0, 0, 0};

    std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
    std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
    std::size_t kernel_volume() const { return k[0] * k[1] * k[2]; }
};

Geometry make_geometry(const Shape& input, std::size_t dims, std::size_t kernel, std::size_t stride,
                       std::size_t padding) {
    if (input.size() != dims + 2) {
        throw ShapeRankError("layer expects " + std::to_string(dims) + " spatial dims, got input " +
                             shape_to_string(input));
    }
    Geometry g;
    g.channels = input[1];
    const std::size_t first = 3 - dims;
    for (std::size_t a = 0; a < dims; ++a) {
        const std::size_t ax = first + a;
        g.in[ax] = input[2 + a];
        g.k[ax] = kernel;
        g.s[ax] = stride;
        g.p[ax] = padding;
        if (g.in[ax] + 2 * padding < kernel) {
            throw UnsupportedShapeError("spatial extent " + std::to_string(g.in[ax]) + " too small for kernel " +
                                        std::to_string(kernel));
        }
        g.out[ax] = (g.in[ax] + 2 * padding - kernel) / stride + 1;
    }
    return g;
}

Shape output_shape_of(const Shape& input, std::size_t channels, const Geometry& g, std::size_t dims) {
    Shape out{input[0], channels};
    for (std::size_t a = 3 - dims; a < 3; ++a) out.push_back(g.out[a]);
    return out;
}

// Fills cols (C*kvol x out_volume, row-major) from one sample.
void im2col(const double* x, const Geometry& g, double* cols) {
    const std::size_t P = g.out_volume();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.channels; ++c) {
        const double* plane = x + c * g.in_volume();
        for (std::size_t a = 0; a < g.k[0]; ++a)
            for (std::size_t b = 0; b < g.k[1]; ++b)
                for (std::size_t e = 0; e < g.k[2]; ++e, ++row) {
                    double* dst = cols + row * P;
                    std::size_t col = 0;
                    for (std::size_t od = 0; od < g.out[0]; ++od) {
                        const auto id = static_cast<std::ptrdiff_t>(od * g.s[0] + a) - static_cast<std::ptrdiff_t>(g.p[0]);
                        const bool d_ok = id >= 0 && id < static_cast<std::ptrdiff_t>(g.in[0]);
                        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
                            const auto ih = static_cast<std::ptrdiff_t>(oh * g.s[1] + b) - static_cast<std::ptrdiff_t>(g.p[1]);
                            const bool h_ok = d_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.in[1]);
                            for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++col) {
                                const auto iw = static_cast<std::ptrdiff_t>(ow * g.s[2] + e) - static_cast<std::ptrdiff_t>(g.p[2]);
                                dst[col] = (h_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in[2]))
                                               ? plane[(static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2] +
                                                       static_cast<std::size_t>(iw)]
                                               : 0.0;
                            }
                        }
                    }
                }
    }
}

// Adjoint of im2col: accumulates cols back into one sample.
void col2im(const double* cols, const Geometry& g, double* x) {
    const std::size_t P = g.out_volume();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.channels; ++c) {
        double* plane = x + c * g.in_volume();
        for (std::size_t a = 0; a < g.k[0]; ++a)
            for (std::size_t b = 0; b < g.k[1]; ++b)
                for (std::size_t e = 0; e < g.k[2]; ++e, ++row) {
                    const double* src = cols + row * P;
                    std::size_t col = 0;
                    for (std::size_t od = 0; od < g.out[0]; ++od) {
                        const auto id = static_cast<std::ptrdiff_t>(od * g.s[0] + a) - static_cast<std::ptrdiff_t>(g.p[0]);
                        const bool d_ok = id >= 0 && id < static_cast<std::ptrdiff_t>(g.in[0]);
                        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
                            const auto ih = static_cast<std::ptrdiff_t>(oh * g.s[1] + b) - static_cast<std::ptrdiff_t>(g.p[1]);
                            const bool h_ok = d_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.in[1]);
                            for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++col) {
                                const auto iw = static_cast<std::ptrdiff_t>(ow * g.s[2] + e) - static_cast<std::ptrdiff_t>(g.p[2]);
                                if (h_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in[2])) {
                                    plane[(static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2] +
                                          static_cast<std::size_t>(iw)] += src[col];
                                }
                            }
                        }
                    }
                }
    }
}

}  // namespace

bool is_batchnorm(ParamRole role) {
    return role == ParamRole::bn_weight || role == ParamRole::bn_bias || role == ParamRole::bn_running_mean ||
           role == ParamRole::bn_running_var;
}

bool is_trainable(ParamRole role) { return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var; }

std::size_t ParamStore::add(std::string name, Tensor value, ParamRole role, bool head) {
    Tensor grad(value.shape());
    params_.push_back(Param{std::move(name), std::move(value), std::move(grad), role, head});
    return params_.size() - 1;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
}

// --- Conv -------------------------------------------------------------------

Conv Conv::make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                std::size_t stride, std::size_t padding, std::size_t dims, CounterRng& rng) {
    Conv c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = kernel;
    c.stride = stride;
    c.padding = padding;
    c.dims = dims;
    std::size_t kvol = 1;
    for (std::size_t a = 0; a < dims; ++a) kvol *= kernel;
    Shape wshape{out, in};
    for (std::size_t a = 0; a < dims; ++a) wshape.push_back(kernel);
    Tensor w(wshape);
    // Kaiming normal, fan_out, ReLU gain.
    const double std_dev = std::sqrt(2.0 / static_cast<double>(out * kvol));
    for (auto& v : w.values()) v = std_dev * rng.normal();
    c.weight = store.add(name + ".weight", std::move(w), ParamRole::weight);
    return c;
}

Shape Conv::output_shape(const Shape& input) const {
    return output_shape_of(input, out_channels, make_geometry(input, dims, kernel, stride, padding), dims);
}

Tensor Conv::forward(ParamStore& store, const Tensor& x, Mode mode) {
    const Geometry g = make_geometry(x.shape(), dims, kernel, stride, padding);
    if (g.channels != in_channels) {
        throw MismatchError("conv: expected " + std::to_string(in_channels) + " input channels, got " +
                            shape_to_string(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    const std::size_t K = in_channels * g.kernel_volume();
    const std::size_t P = g.out_volume();
    Tensor out(output_shape_of(x.shape(), out_channels, g, dims));

    const ConstRowMap w(store[weight].value.data(), static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(K));
    std::vector<double> scratch;
    double* cols = nullptr;
    if (mode == Mode::train) {
        cached_input = x.shape();
        cached_cols.assign(batch * K * P, 0.0);
    } else {
        cached_input.clear();
        cached_cols.clear();
        scratch.resize(K * P);
        cols = scratch.data();
    }
    const std::size_t in_stride = trailing_numel(x.shape());
    for (std::size_t n = 0; n < batch; ++n) {
        if (mode == Mode::train) cols = cached_cols.data() + n * K * P;
        im2col(x.data() + n * in_stride, g, cols);
        RowMap y(out.data() + n * out_channels * P, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(P));
        y.noalias() = w * ConstRowMap(cols, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    }
    return out;
}

Tensor Conv::backward(ParamStore& store, const Tensor& grad_out) {
    const Geometry g = make_geometry(cached_input, dims, kernel, stride, padding);
    const std::size_t batch = cached_input[0];
    const std::size_t K = in_channels * g.kernel_volume();
    const std::size_t P = g.out_volume();

    const ConstRowMap w(store[weight].value.data(), static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(K));
    RowMap dw(store[weight].grad.data(), static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(K));
    Tensor grad_in;
    std::vector<double> dcols;
    if (input_grad) {
        grad_in = Tensor(cached_input);
        dcols.resize(K * P);
    }
    const std::size_t in_stride = trailing_numel(cached_input);
    for (std::size_t n = 0; n < batch; ++n) {
        const ConstRowMap gy(grad_out.data() + n * out_channels * P, static_cast<Eigen::Index>(out_channels),
                             static_cast<Eigen::Index>(P));
        const ConstRowMap cols(cached_cols.data() + n * K * P, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dw.noalias() += gy * cols.transpose();
        if (input_grad) {
            RowMap dc(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
            dc.noalias() = w.transpose() * gy;
            col2im(dcols.data(), g, grad_in.data() + n * in_stride);
        }
    }
    return grad_in;
}

// --- BatchNorm --------------------------------------------------------------

BatchNorm BatchNorm::make(ParamStore& store, const std::string& name, std::size_t channels) {
    BatchNorm bn;
    bn.channels = channels;
    bn.weight = store.add(name + ".weight", Tensor({channels}, 1.0), ParamRole::bn_weight);
    bn.bias = store.add(name + ".bias", Tensor({channels}, 0.0), ParamRole::bn_bias);
    bn.running_mean = store.add(name + ".running_mean", Tensor({channels}, 0.0), ParamRole::bn_running_mean);
    bn.running_var = store.add(name + ".running_var", Tensor({channels}, 1.0), ParamRole::bn_running_var);
    return bn;
}

Tensor BatchNorm::forward(ParamStore& store, const Tensor& x, Mode mode) {
    if (x.rank() < 2 || x.dim(1) != channels) {
        throw MismatchError("batchnorm: expected " + std::to_string(channels) + " channels, got " +
                            shape_to_string(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    const std::size_t plane = spatial_numel(x.shape());
    const std::size_t count = batch * plane;
    const auto& gamma = store[weight].value;
    const auto& beta = store[bias].value;
    auto& rmean = store[running_mean].value;
    auto& rvar = store[running_var].value;
    Tensor out(x.shape());

    if (mode == Mode::eval) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double inv = 1.0 / std::sqrt(rvar[c] + eps);
            for (std::size_t n = 0; n < batch; ++n) {
                const std::size_t base = (n * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) out[base + i] = gamma[c] * (x[base + i] - rmean[c]) * inv + beta[c];
            }
        }
        return out;
    }

    cached_xhat = Tensor(x.shape());
    cached_inv_std.assign(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) mean += x[base + i];
        }
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = x[base + i] - mean;
                var += d * d;
            }
        }
        const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : var;
        var /= static_cast<double>(count);
        const double inv = 1.0 / std::sqrt(var + eps);
        cached_inv_std[c] = inv;
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (x[base + i] - mean) * inv;
                cached_xhat[base + i] = xh;
                out[base + i] = gamma[c] * xh + beta[c];
            }
        }
        rmean[c] = (1.0 - momentum) * rmean[c] + momentum * mean;
        rvar[c] = (1.0 - momentum) * rvar[c] + momentum * unbiased;
    }
    return out;
}

Tensor BatchNorm::backward(ParamStore& store, const Tensor& grad_out) {
    const Shape& shape = cached_xhat.shape();
    const std::size_t batch = shape[0];
    const std::size_t plane = spatial_numel(shape);
    const auto count = static_cast<double>(batch * plane);
    const auto& gamma = store[weight].value;
    auto& dgamma = store[weight].grad;
    auto& dbeta = store[bias].grad;
    Tensor grad_in(shape);
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += grad_out[base + i];
                sum_dy_xhat += grad_out[base + i] * cached_xhat[base + i];
            }
        }
        dbeta[c] += sum_dy;
        dgamma[c] += sum_dy_xhat;
        const double k = gamma[c] * cached_inv_std[c] / count;
        for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                grad_in[base + i] = k * (count * grad_out[base + i] - sum_dy - cached_xhat[base + i] * sum_dy_xhat);
            }
        }
    }
    return grad_in;
}

// --- Relu -------------------------------------------------------------------

Tensor Relu::forward(const Tensor& x, Mode mode) {
    Tensor out(x.shape());
    if (mode == Mode::train) cached_mask.assign(x.numel(), 0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool on = x[i] > 0.0;
        out[i] = on ? x[i] : 0.0;
        if (mode == Mode::train) cached_mask[i] = on;
    }
    return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
    Tensor grad_in(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.numel(); ++i) grad_in[i] = cached_mask[i] ? grad_out[i] : 0.0;
    return grad_in;
}

// --- MaxPool ----------------------------------------------------------------

Shape MaxPool::output_shape(const Shape& input) const {
    const std::size_t dims = input.size() - 2;
    return output_shape_of(input, input[1], make_geometry(input, dims, kernel, stride, padding), dims);
}

Tensor MaxPool::forward(const Tensor& x, Mode mode) {
    const std::size_t dims = x.rank() - 2;
    const Geometry g = make_geometry(x.shape(), dims, kernel, stride, padding);
    Tensor out(output_shape_of(x.shape(), x.dim(1), g, dims));
    const std::size_t planes = x.dim(0) * x.dim(1);
    if (mode == Mode::train) {
        cached_input = x.shape();
        cached_argmax.assign(out.numel(), 0);
    }
    std::size_t o = 0;
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const std::size_t base = pl * g.in_volume();
        for (std::size_t od = 0; od < g.out[0]; ++od)
            for (std::size_t oh = 0; oh < g.out[1]; ++oh)
                for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t arg = base;
                    for (std::size_t a = 0; a < g.k[0]; ++a) {
                        const auto id = static_cast<std::ptrdiff_t>(od * g.s[0] + a) - static_cast<std::ptrdiff_t>(g.p[0]);
                        if (id < 0 || id >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
                        for (std::size_t b = 0; b < g.k[1]; ++b) {
                            const auto ih = static_cast<std::ptrdiff_t>(oh * g.s[1] + b) - static_cast<std::ptrdiff_t>(g.p[1]);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
                            for (std::size_t e = 0; e < g.k[2]; ++e) {
                                const auto iw = static_cast<std::ptrdiff_t>(ow * g.s[2] + e) - static_cast<std::ptrdiff_t>(g.p[2]);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
                                const std::size_t idx = base + (static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2] +
                                                        static_cast<std::size_t>(iw);
                                if (x[idx] > best) {
                                    best = x[idx];
                                    arg = idx;
                                }
                            }
                        }
                    }
                    out[o] = best;
                    if (mode == Mode::train) cached_argmax[o] = arg;
                }
    }
    return out;
}

Tensor MaxPool::backward(const Tensor& grad_out) {
    Tensor grad_in(cached_input);
    for (std::size_t o = 0; o < grad_out.numel(); ++o) grad_in[cached_argmax[o]] += grad_out[o];
    return grad_in;
}

// --- BasicBlock -------------------------------------------------------------

BasicBlock BasicBlock::make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t stride, std::size_t dims, CounterRng& rng) {
    BasicBlock b;
    b.conv1 = Conv::make(store, name + ".conv1", in, out, 3, stride, 1, dims, rng);
    b.bn1 = BatchNorm::make(store, name + ".bn1", out);
    b.conv2 = Conv::make(store, name + ".conv2", out, out, 3, 1, 1, dims, rng);
    b.bn2 = BatchNorm::make(store, name + ".bn2", out);
    b.projection = stride != 1 || in != out;
    if (b.projection) {
        b.short_conv = Conv::make(store, name + ".shortcut.conv", in, out, 1, stride, 0, dims, rng);
        b.short_bn = BatchNorm::make(store, name + ".shortcut.bn", out);
    }
    return b;
}

Tensor BasicBlock::forward(ParamStore& store, const Tensor& x, Mode mode) {
    Tensor main = conv1.forward(store, x, mode);
    main = bn1.forward(store, main, mode);
    main = relu1.forward(main, mode);
    main = conv2.forward(store, main, mode);
    main = bn2.forward(store, main, mode);
    if (projection) {
        main += short_bn.forward(store, short_conv.forward(store, x, mode), mode);
    } else {
        main += x;
    }
    return relu_out.forward(main, mode);
}

Tensor BasicBlock::backward(ParamStore& store, const Tensor& grad_out) {
    const Tensor g = relu_out.backward(grad_out);
    Tensor gm = bn2.backward(store, g);
    gm = conv2.backward(store, gm);
    gm = relu1.backward(gm);
    gm = bn1.backward(store, gm);
    Tensor grad_in = conv1.backward(store, gm);
    if (projection) {
        grad_in += short_conv.backward(store, short_bn.backward(store, g));
    } else {
        grad_in += g;
    }
    return grad_in;
}

// --- Stage ------------------------------------------------------------------

Tensor Stage::forward(ParamStore& store, const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& layer : layers) {
        h = std::visit(
            [&](auto& l) -> Tensor {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Relu> || std::is_same_v<L, MaxPool>) {
                    return l.forward(h, mode);
                } else {
                    return l.forward(store, h, mode);
                }
            },
            layer);
    }
    return h;
}

Tensor Stage::backward(ParamStore& store, const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        g = std::visit(
            [&](auto& l) -> Tensor {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Relu> || std::is_same_v<L, MaxPool>) {
                    return l.backward(g);
                } else {
                    return l.backward(store, g);
                }
            },
            *it);
    }
    return g;
}

// --- GlobalAvgPool / Linear -------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, Mode mode) {
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t n = spatial_numel(x.shape());
    if (mode == Mode::train) cached_input = x.shape();
    Tensor out({x.dim(0), x.dim(1)});
    for (std::size_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[p * n + i];
        out[p] = s / static_cast<double>(n);
    }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    Tensor grad_in(cached_input);
    const std::size_t n = spatial_numel(cached_input);
    for (std::size_t p = 0; p < grad_out.numel(); ++p) {
        const double v = grad_out[p] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) grad_in[p * n + i] = v;
    }
    return grad_in;
}

Linear Linear::make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, CounterRng& rng,
                    bool head) {
    Linear l;
    l.in_features = in;
    l.out_features = out;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w({out, in});
    for (auto& v : w.values()) v = bound * (2.0 * rng.uniform() - 1.0);
    Tensor b({out});
    for (auto& v : b.values()) v = bound * (2.0 * rng.uniform() - 1.0);
    l.weight = store.add(name + ".weight", std::move(w), ParamRole::weight, head);
    l.bias = store.add(name + ".bias", std::move(b), ParamRole::bias, head);
    return l;
}

Tensor Linear::forward(ParamStore& store, const Tensor& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != in_features) {
        throw MismatchError("linear: expected (b, " + std::to_string(in_features) + "), got " + shape_to_string(x.shape()));
    }
    const auto b = static_cast<Eigen::Index>(x.dim(0));
    const ConstRowMap w(store[weight].value.data(), static_cast<Eigen::Index>(out_features),
                        static_cast<Eigen::Index>(in_features));
    const Eigen::Map<const Eigen::VectorXd> bias_v(store[bias].value.data(), static_cast<Eigen::Index>(out_features));
    Tensor out({x.dim(0), out_features});
    RowMap y(out.data(), b, static_cast<Eigen::Index>(out_features));
    y.noalias() = ConstRowMap(x.data(), b, static_cast<Eigen::Index>(in_features)) * w.transpose();
    y.rowwise() += bias_v.transpose();
    if (mode == Mode::train) cached_input = x;
    return out;
}

Tensor Linear::backward(ParamStore& store, const Tensor& grad_out) {
    const auto b = static_cast<Eigen::Index>(cached_input.dim(0));
    const ConstRowMap gy(grad_out.data(), b, static_cast<Eigen::Index>(out_features));
    const ConstRowMap x(cached_input.data(), b, static_cast<Eigen::Index>(in_features));
    RowMap dw(store[weight].grad.data(), static_cast<Eigen::Index>(out_features), static_cast<Eigen::Index>(in_features));
    dw.noalias() += gy.transpose() * x;
    Eigen::Map<Eigen::VectorXd> db(store[bias].grad.data(), static_cast<Eigen::Index>(out_features));
    db += gy.colwise().sum().transpose();
    const ConstRowMap w(store[weight].value.data(), static_cast<Eigen::Index>(out_features),
                        static_cast<Eigen::Index>(in_features));
    Tensor grad_in(cached_input.shape());
    RowMap(grad_in.data(), b, static_cast<Eigen::Index>(in_features)).noalias() = gy * w;
    return grad_in;
}

}  // namespace fedskd::nn
