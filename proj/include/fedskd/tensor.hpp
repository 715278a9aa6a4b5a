#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedskd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major tensor of doubles. Value semantics; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Reinterprets the buffer with a new shape of equal element count.
    Tensor reshaped(Shape shape) const;
    void fill(double value);
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double scale);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Number of elements per leading index: product of shape[1..].
std::size_t trailing_numel(const Shape& shape);

// Product of spatial dims, i.e. shape[2..] for (b, c, s...) tensors.
std::size_t spatial_numel(const Shape& shape);
Shape spatial_shape(const Shape& shape);

// Selects rows (leading-axis entries) of a tensor in the given order.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

}  // namespace fedskd
