#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fedcyc/tensor.hpp"

using namespace fedcyc;

TEST(Tensor, DefaultIsScalarZero) {
  Tensor t;
  EXPECT_EQ(t.shape(), Shape{1});
  EXPECT_EQ(t.item(), 0.0f);
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<float>(6)));
}

TEST(Tensor, RejectsZeroExtentAndEmptyShape) {
  EXPECT_THROW(Tensor({2, 0}, {}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}, {1.0f}), ShapeError);
}

TEST(Tensor, RejectsNonFinite) {
  EXPECT_THROW(Tensor({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Tensor({1}, {std::numeric_limits<float>::infinity()}), NumericError);
}

TEST(Tensor, FactoriesAndItem) {
  auto z = Tensor::zeros({2, 2});
  EXPECT_EQ(z.size(), 4u);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
  auto f = Tensor::full({3}, 2.5f);
  EXPECT_EQ(f[2], 2.5f);
  EXPECT_EQ(Tensor::scalar(7.0f).item(), 7.0f);
  EXPECT_THROW(f.item(), ShapeError);
}

TEST(Tensor, CastRoundTrip) {
  Tensor t({2}, {0.1f, -3.0f});
  auto d = t.cast<double>();
  EXPECT_EQ(d.shape(), t.shape());
  EXPECT_TRUE(bitwise_equal(d.cast<float>(), t));
}

TEST(Tensor, BitwiseEqualDistinguishesSignedZeroAndShape) {
  Tensor a({2}, {0.0f, 1.0f});
  Tensor b({2}, {-0.0f, 1.0f});
  EXPECT_FALSE(bitwise_equal(a, b));
  EXPECT_FALSE(bitwise_equal(a, Tensor({1, 2}, {0.0f, 1.0f})));
  EXPECT_TRUE(bitwise_equal(a, Tensor({2}, {0.0f, 1.0f})));
}

TEST(Tensor, StackAddsLeadingAxis) {
  std::vector<Tensor> samples{Tensor({1, 2}, {1, 2}), Tensor({1, 2}, {3, 4})};
  auto s = stack<float>(samples);
  EXPECT_EQ(s.shape(), (Shape{2, 1, 2}));
  EXPECT_EQ(s[3], 4.0f);
  std::vector<Tensor> bad{Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})};
  EXPECT_THROW(stack<float>(bad), ShapeError);
  EXPECT_THROW(stack<float>(std::span<const Tensor>{}), ShapeError);
}

TEST(Tensor, ShapeString) { EXPECT_EQ(shape_string({1, 3, 16}), "[1x3x16]"); }

TEST(Tensor, RelativeErrorIsScaledByLargestMagnitude) {
  Tensor a({3}, {1.0f, -4.0f, 0.0f});
  Tensor b({3}, {1.0f, -4.0f, 0.002f});
  EXPECT_NEAR(relative_error(a, b), 0.002 / 4.0, 1e-9);
  EXPECT_EQ(relative_error(a, a), 0.0);
  EXPECT_EQ(relative_error(Tensor::zeros({2}), Tensor::zeros({2})), 0.0);
  EXPECT_THROW(relative_error(a, Tensor::zeros({2})), ShapeError);
}
