#pragma once

#include "fedskd/tensor.hpp"

namespace fedskd {

// Bilinear (2 spatial dims) / trilinear (3 spatial dims) resampling of a
// (b, c, s...) tensor to (b, c, target...), align_corners = false:
//
//   src = max((dst + 0.5) * in / out - 0.5, 0)
//   i0  = floor(src), i1 = i0 + 1 if i0 < in - 1 else i0
//   w1  = src - i0,   w0 = 1 - w1
//
// applied separably per axis (the output is the product-weighted sum over the
// 2^d corners). No anti-aliasing when downsampling. Identity when the shapes
// already match.
Tensor resample_linear(const Tensor& x, const Shape& target_spatial);

// Adjoint of resample_linear: maps a gradient w.r.t. the resampled tensor back
// onto the input tensor of shape `input_shape`.
Tensor resample_linear_backward(const Tensor& grad_out, const Shape& input_shape);

}  // namespace fedskd
