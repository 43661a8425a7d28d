#include <gtest/gtest.h>

#include "edenn/ops.hpp"
#include "test_util.hpp"

using namespace edenn;
using edenn::testing::brute_conv2d;
using edenn::testing::random_tensor;

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor<double>({2, 0, 3}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
}

TEST(Tensor, TimeSliceStackRoundTrip) {
  Rng rng(3);
  auto v = random_tensor({3, 4, 2, 5}, rng);
  std::vector<Tensor<double>> slices;
  for (std::size_t t = 0; t < 5; ++t) slices.push_back(time_slice(v, t));
  EXPECT_EQ(stack_time(slices), v);
  EXPECT_EQ(slices[2](1, 3, 1), v(1, 3, 1, 2));
}

TEST(Conv2d, ScalarProduct) {
  Tensor<double> in({1, 1, 1}, {5.0});
  Tensor<double> k({1, 1, 1, 1}, {3.0});
  EXPECT_EQ(conv2d(in, k)[0], 15.0);
}

TEST(Conv2d, ZeroKernelGivesZeros) {
  Rng rng(1);
  auto in = random_tensor({7, 5, 3}, rng);
  Tensor<double> k({3, 3, 3, 4});
  auto out = conv2d(in, k, 2);
  for (auto v : out.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.shape(), (Shape{4, 3, 4}));
}

TEST(Conv2d, ValidMatchesQuadrupleLoop) {
  Rng rng(11);
  auto in = random_tensor({6, 6, 2}, rng);
  auto k = random_tensor({3, 3, 2, 1}, rng);
  auto out = conv2d(in, k, 1, Padding::valid);
  ASSERT_EQ(out.shape(), (Shape{4, 4, 1}));
  for (std::size_t x = 0; x < 4; ++x)
    for (std::size_t y = 0; y < 4; ++y) {
      double s = 0;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t c = 0; c < 2; ++c) s += in(x + i, y + j, c) * k(i, j, c, 0);
      EXPECT_NEAR(out(x, y, 0), s, 1e-12);
    }
}

TEST(Conv2d, RandomShapesMatchBruteForce) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t W = 1 + rng.below(8), H = 1 + rng.below(8);
    const std::size_t cin = 1 + rng.below(4), cout = 1 + rng.below(4);
    const std::size_t k = 1 + 2 * rng.below(2);
    const std::size_t stride = 1 + rng.below(2);
    const bool same = W < k || H < k || rng.below(2) == 0;
    auto in = random_tensor({W, H, cin}, rng);
    // sparse inputs exercise the zero-skip path
    for (auto& v : in.values())
      if (rng.uniform() < 0.3) v = 0.0;
    auto kern = random_tensor({k, k, cin, cout}, rng);
    auto got = conv2d(in, kern, stride, same ? Padding::same : Padding::valid);
    auto want = brute_conv2d(in, kern, stride, same);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LE(max_abs_diff(got, want), 1e-12) << "trial " << trial;
  }
}

TEST(Conv2d, SamePaddingOutputExtent) {
  for (std::size_t W : {1u, 4u, 5u, 9u}) {
    for (std::size_t s : {1u, 2u, 3u}) {
      auto g = ConvGeometry::make(W, W, 3, 3, s, Padding::same);
      EXPECT_EQ(g.out_w, (W + s - 1) / s);
    }
  }
}

TEST(Conv2d, Errors) {
  Tensor<double> in({4, 4, 2});
  EXPECT_THROW(conv2d(in, Tensor<double>({3, 3, 3, 1})), ShapeError);
  EXPECT_THROW(conv2d(in, Tensor<double>({2, 2, 2, 1})), ShapeError);
  EXPECT_THROW(conv2d(in, Tensor<double>({5, 5, 2, 1}), 1, Padding::valid), ShapeError);
  EXPECT_THROW(conv2d(in, Tensor<double>({3, 3, 2, 1}), 0), ShapeError);
}

TEST(Conv2d, ThreadCountDoesNotChangeBits) {
  Rng rng(5);
  auto in = random_tensor({33, 17, 3}, rng);
  auto k = random_tensor({3, 3, 3, 5}, rng);
  set_num_threads(1);
  auto a = conv2d(in, k, 1);
  auto ga = conv2d_grad_kernel(a, in, k.shape(), 1, Padding::same);
  set_num_threads(4);
  auto b = conv2d(in, k, 1);
  auto gb = conv2d_grad_kernel(b, in, k.shape(), 1, Padding::same);
  set_num_threads(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ga, gb);
}

TEST(Hadamard, Basics) {
  Tensor<double> a({3}, {1, 2, 3});
  EXPECT_EQ(hadamard(a, Tensor<double>({3}, {2, 0, 4})), Tensor<double>({3}, {2, 0, 12}));
  EXPECT_EQ(hadamard(a, Tensor<double>({3}, 1.0)), a);
  EXPECT_EQ(hadamard(a, Tensor<double>({3})), Tensor<double>({3}));
}

TEST(Hadamard, MaskBroadcastsOverChannels) {
  Rng rng(9);
  auto a = random_tensor({3, 2, 4}, rng);
  Tensor<double> m({3, 2}, {1, 0, 0, 1, 1, 0});
  auto out = hadamard(a, m);
  for (std::size_t x = 0; x < 3; ++x)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out(x, y, c), a(x, y, c) * m(x, y));
  EXPECT_EQ(hadamard(a, m.reshaped({3, 2, 1})), out);
  EXPECT_THROW(hadamard(a, Tensor<double>({2, 3})), ShapeError);
  EXPECT_THROW(hadamard(a, Tensor<double>({3, 2, 2})), ShapeError);
}

TEST(Footprint, CountsOnlyInGridTaps) {
  Tensor<double> ones({4, 4}, 1.0);
  auto g = ConvGeometry::make(4, 4, 3, 3, 1, Padding::same);
  auto s = footprint_sum(ones, g);
  EXPECT_EQ(s(0, 0), 4.0);
  EXPECT_EQ(s(1, 0), 6.0);
  EXPECT_EQ(s(1, 1), 9.0);
  EXPECT_EQ(centered_window_sum(ones, 3, 3), s);
}

TEST(Upsample, NearestAndAdjoint) {
  Rng rng(4);
  auto a = random_tensor({2, 3, 2}, rng);
  auto up = upsample_nearest(a, 4, 6);
  EXPECT_EQ(up(3, 5, 1), a(1, 2, 1));
  // <up(a), g> == <a, up^T(g)>
  auto g = random_tensor({4, 6, 2}, rng);
  auto back = upsample_nearest_grad(g, a.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * g[i];
  for (std::size_t i = 0; i < a.size(); ++i) rhs += a[i] * back[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(BlockAverage, IgnoresInvalidCells) {
  Tensor<double> f({2, 2, 1}, {1, 3, 5, 100});
  Tensor<double> valid({2, 2}, {1, 1, 1, 0});
  auto [avg, mask] = masked_block_average(f, valid, 2);
  EXPECT_DOUBLE_EQ(avg[0], 3.0);
  EXPECT_EQ(mask[0], 1.0);
}
