#include "fedskd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "fedskd/errors.hpp"

namespace fedskd {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_)) {
        throw MismatchError("tensor: " + std::to_string(data_.size()) + " values do not fill shape " +
                            shape_to_string(shape_));
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw MismatchError("tensor: cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
        throw MismatchError("tensor: += shape " + shape_to_string(other.shape_) + " vs " + shape_to_string(shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double scale) {
    for (auto& v : data_) v *= scale;
    return *this;
}

std::size_t trailing_numel(const Shape& shape) {
    return shape.empty() ? 1 : shape_numel(Shape(shape.begin() + 1, shape.end()));
}

std::size_t spatial_numel(const Shape& shape) { return shape_numel(spatial_shape(shape)); }

Shape spatial_shape(const Shape& shape) {
    if (shape.size() < 2) return {};
    return Shape(shape.begin() + 2, shape.end());
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
    Shape shape = t.shape();
    const std::size_t stride = trailing_numel(shape);
    shape[0] = rows.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(t.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

}  // namespace fedskd
