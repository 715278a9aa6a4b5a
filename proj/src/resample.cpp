#include "fedskd/resample.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "fedskd/errors.hpp"

namespace fedskd {
namespace {

struct AxisTap {
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    double w0 = 1.0;
    double w1 = 0.0;
};

std::vector<AxisTap> axis_taps(std::size_t in, std::size_t out) {
    std::vector<AxisTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::size_t>(src);
        i0 = std::min(i0, in - 1);
        AxisTap& t = taps[o];
        t.i0 = i0;
        t.i1 = i0 < in - 1 ? i0 + 1 : i0;
        t.w1 = src - static_cast<double>(i0);
        t.w0 = 1.0 - t.w1;
    }
    return taps;
}

void check_shapes(const Shape& full, const Shape& target) {
    if (full.size() != 4 && full.size() != 5) {
        throw ShapeRankError("resample: expected (b, c, s...) with 2 or 3 spatial dims, got " + shape_to_string(full));
    }
    if (target.size() != full.size() - 2) {
        throw ShapeRankError("resample: target " + shape_to_string(target) + " does not match spatial rank of " +
                             shape_to_string(full));
    }
    for (auto s : target) {
        if (s == 0) throw ShapeRankError("resample: zero-sized target " + shape_to_string(target));
    }
}

// Visits every (output position, input position, weight) triple of the
// separable interpolation for one (b, c) plane.
template <typename Visit>
void for_each_weight(const Shape& in_sp, const Shape& out_sp, const std::vector<std::vector<AxisTap>>& taps,
                     Visit&& visit) {
    const std::size_t d = in_sp.size();
    const std::size_t out_n = shape_numel(out_sp);
    std::array<std::size_t, 3> idx{};
    for (std::size_t flat = 0; flat < out_n; ++flat) {
        for (unsigned corner = 0; corner < (1u << d); ++corner) {
            double w = 1.0;
            std::size_t src = 0;
            for (std::size_t a = 0; a < d; ++a) {
                const AxisTap& t = taps[a][idx[a]];
                const bool hi = (corner >> (d - 1 - a)) & 1u;
                w *= hi ? t.w1 : t.w0;
                src = src * in_sp[a] + (hi ? t.i1 : t.i0);
            }
            if (w != 0.0) visit(flat, src, w);
        }
        for (std::size_t a = d; a-- > 0;) {
            if (++idx[a] < out_sp[a]) break;
            idx[a] = 0;
        }
    }
}

}  // namespace

Tensor resample_linear(const Tensor& x, const Shape& target_spatial) {
    check_shapes(x.shape(), target_spatial);
    const Shape in_sp = spatial_shape(x.shape());
    if (in_sp == target_spatial) return x;

    std::vector<std::vector<AxisTap>> taps;
    for (std::size_t a = 0; a < in_sp.size(); ++a) taps.push_back(axis_taps(in_sp[a], target_spatial[a]));

    Shape out_shape{x.dim(0), x.dim(1)};
    out_shape.insert(out_shape.end(), target_spatial.begin(), target_spatial.end());
    Tensor out(out_shape);
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t in_n = shape_numel(in_sp);
    const std::size_t out_n = shape_numel(target_spatial);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data() + p * in_n;
        double* dst = out.data() + p * out_n;
        for_each_weight(in_sp, target_spatial, taps,
                        [&](std::size_t o, std::size_t i, double w) { dst[o] += w * src[i]; });
    }
    return out;
}

Tensor resample_linear_backward(const Tensor& grad_out, const Shape& input_shape) {
    check_shapes(input_shape, spatial_shape(grad_out.shape()));
    const Shape in_sp = spatial_shape(input_shape);
    const Shape out_sp = spatial_shape(grad_out.shape());
    if (in_sp == out_sp) return grad_out;

    std::vector<std::vector<AxisTap>> taps;
    for (std::size_t a = 0; a < in_sp.size(); ++a) taps.push_back(axis_taps(in_sp[a], out_sp[a]));

    Tensor grad_in(input_shape);
    const std::size_t planes = input_shape[0] * input_shape[1];
    const std::size_t in_n = shape_numel(in_sp);
    const std::size_t out_n = shape_numel(out_sp);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* g = grad_out.data() + p * out_n;
        double* dst = grad_in.data() + p * in_n;
        for_each_weight(in_sp, out_sp, taps, [&](std::size_t o, std::size_t i, double w) { dst[i] += w * g[o]; });
    }
    return grad_in;
}

}  // namespace fedskd
