#include <gtest/gtest.h>

#include <cmath>

#include "fedskd/errors.hpp"
#include "fedskd/resample.hpp"
#include "fedskd/tensor.hpp"

using namespace fedskd;

TEST(Tensor, ShapeHelpers) {
    const Shape s{2, 3, 4, 5};
    EXPECT_EQ(shape_numel(s), 120u);
    EXPECT_EQ(trailing_numel(s), 60u);
    EXPECT_EQ(spatial_numel(s), 20u);
    EXPECT_EQ(spatial_shape(s), (Shape{4, 5}));
}

TEST(Tensor, GatherRowsAndArithmetic) {
    Tensor t(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const std::vector<std::size_t> rows{2, 0};
    const Tensor g = gather_rows(t, rows);
    EXPECT_EQ(g.shape(), (Shape{2, 2}));
    EXPECT_EQ(g.storage(), (std::vector<double>{5, 6, 1, 2}));
    Tensor h = g;
    h += g;
    h *= 0.5;
    EXPECT_EQ(h, g);
    EXPECT_THROW(h += t, MismatchError);
}

TEST(Tensor, FiniteCheck) {
    Tensor t(Shape{2}, 1.0);
    EXPECT_TRUE(t.all_finite());
    t[1] = std::nan("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Resample, IdentityWhenShapesMatch) {
    Tensor t(Shape{1, 2, 3, 3});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
    EXPECT_EQ(resample_linear(t, Shape{3, 3}), t);
}

TEST(Resample, BilinearHalfPixelConvention) {
    // 2 -> 4 upsampling of [0, 1] along one axis: source coordinate
    // (o + 0.5) * 0.5 - 0.5 clamped at 0 gives 0, 0.25, 0.75, 1.
    Tensor t(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
    const Tensor up = resample_linear(t, Shape{1, 4});
    const std::vector<double> expected{0.0, 0.25, 0.75, 1.0};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(up[i], expected[i], 1e-15);
}

TEST(Resample, DownsampleAveragesNeighbours) {
    Tensor t(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const Tensor d = resample_linear(t, Shape{1, 1});
    EXPECT_NEAR(d[0], 2.5, 1e-15);
}

TEST(Resample, BackwardIsAdjoint) {
    // <R x, y> == <x, R^T y> for random x, y.
    Tensor x(Shape{2, 3, 3, 4, 2});
    Tensor y(Shape{2, 3, 5, 2, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::sin(0.7 * static_cast<double>(i) + 0.1);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::cos(0.3 * static_cast<double>(i) + 0.2);
    const Tensor rx = resample_linear(x, Shape{5, 2, 3});
    const Tensor rty = resample_linear_backward(y, x.shape());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) lhs += rx[i] * y[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * rty[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Resample, RankMismatchThrows) {
    Tensor t(Shape{1, 1, 2, 2});
    EXPECT_THROW(resample_linear(t, Shape{2, 2, 2}), ShapeRankError);
}
