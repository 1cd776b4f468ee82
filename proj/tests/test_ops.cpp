#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "metalens/errors.hpp"
#include "metalens/numerics/ops.hpp"
#include "test_support.hpp"

using namespace metalens;
using namespace metalens::numerics;
using mltest::grad_check;
using mltest::random_tensor;
using mltest::weighted_sum;

namespace {

Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<double> out(B * M * N, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < K; ++k) s += a.at({n, i, k}) * b.at({n, k, j});
        out[(n * M + i) * N + j] = s;
      }
  return Tensor({B, M, N}, out);
}

std::size_t clampi(long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, long(n) - 1)); }

}  // namespace

TEST(Ops, MatmulMatchesTripleLoop) {
  const Tensor a = random_tensor({3, 5, 7}, 1), b = random_tensor({3, 7, 4}, 2);
  EXPECT_LT(max_abs_diff(matmul(a, b), matmul_oracle(a, b)), 1e-12);
}

TEST(Ops, MatmulBroadcastsLeadingDims) {
  const Tensor a = random_tensor({2, 3, 4}, 1), b = random_tensor({1, 4, 2}, 2);
  const Tensor out = matmul(a, b);
  ASSERT_EQ(out.shape(), (Shape{2, 3, 2}));
  const std::array parts{b, b};
  EXPECT_LT(max_abs_diff(out, matmul_oracle(a, concat(parts, 0))), 1e-12);
  EXPECT_THROW(matmul(a, random_tensor({2, 3, 2}, 3)), ShapeError);
}

TEST(Ops, BroadcastingBinaryOps) {
  const Tensor a = random_tensor({2, 3, 4}, 1), g = random_tensor({2, 1, 4}, 2);
  const Tensor out = mul(a, g);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(out.at({i, j, k}), a.at({i, j, k}) * g.at({i, 0, k}));
  EXPECT_THROW(add(a, random_tensor({3, 3}, 1)), ShapeError);
}

TEST(Ops, Conv1x1MatchesNestedLoops) {
  const Tensor x = random_tensor({2, 3, 4, 5}, 1), w = random_tensor({6, 3}, 2);
  const Tensor out = conv2d(x, w, ConvMode::Pointwise1x1);
  ASSERT_EQ(out.shape(), (Shape{2, 6, 4, 5}));
  double err = 0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 6; ++o)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x0 = 0; x0 < 5; ++x0) {
          double s = 0;
          for (std::size_t c = 0; c < 3; ++c) s += w.at({o, c}) * x.at({b, c, y, x0});
          err = std::max(err, std::abs(s - out.at({b, o, y, x0})));
        }
  EXPECT_LT(err, 1e-12);
}

TEST(Ops, Depthwise3x3MatchesNestedLoopsWithReplicateBorder) {
  const Tensor x = random_tensor({1, 2, 5, 6}, 3), w = random_tensor({2, 3, 3}, 4);
  const Tensor out = conv2d(x, w, ConvMode::Depthwise3x3);
  double err = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t xx = 0; xx < 6; ++xx) {
        double s = 0;
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j)
            s += w.at({c, i, j}) * x.at({0, c, clampi(long(y + i) - 1, 5), clampi(long(xx + j) - 1, 6)});
        err = std::max(err, std::abs(s - out.at({0, c, y, xx})));
      }
  EXPECT_LT(err, 1e-12);
}

TEST(Ops, BoxPoolMatchesNestedLoops) {
  const Tensor x = random_tensor({1, 2, 6, 5}, 5);
  for (std::size_t k : {1u, 2u, 3u, 4u}) {
    const Tensor out = avg_pool(x, PoolSpec::box(k));
    const long lo = -long(k - 1) / 2, hi = long(k) / 2;
    double err = 0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t xx = 0; xx < 5; ++xx) {
          double s = 0;
          for (long dy = lo; dy <= hi; ++dy)
            for (long dx = lo; dx <= hi; ++dx) s += x.at({0, c, clampi(long(y) + dy, 6), clampi(long(xx) + dx, 5)});
          err = std::max(err, std::abs(s / double(k * k) - out.at({0, c, y, xx})));
        }
    EXPECT_LT(err, 1e-12) << "k=" << k;
  }
}

TEST(Ops, SpatialAndChannelPoolShapes) {
  const Tensor x = random_tensor({2, 3, 4, 5}, 6);
  const Tensor s = avg_pool(x, PoolSpec::spatial()), c = avg_pool(x, PoolSpec::channel());
  EXPECT_EQ(s.shape(), (Shape{2, 3, 1, 1}));
  EXPECT_EQ(c.shape(), (Shape{2, 1, 4, 5}));
  double m = 0;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t xx = 0; xx < 5; ++xx) m += x.at({1, 2, y, xx});
  EXPECT_NEAR(s.at({1, 2, 0, 0}), m / 20, 1e-14);
  EXPECT_NEAR(c.at({0, 0, 1, 1}), (x.at({0, 0, 1, 1}) + x.at({0, 1, 1, 1}) + x.at({0, 2, 1, 1})) / 3, 1e-14);
}

TEST(Ops, SoftmaxRowsSumToOneAndSurviveLargeLogits) {
  Tensor x({2, 3}, {1000, 1001, 1002, -5, 0, 5});
  const Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 2; ++r) {
    double t = 0;
    for (std::size_t c = 0; c < 3; ++c) t += s.at({r, c});
    EXPECT_NEAR(t, 1.0, 1e-15);
  }
  EXPECT_NEAR(s.at({0, 2}), 1 / (1 + std::exp(-1.0) + std::exp(-2.0)), 1e-14);
  EXPECT_THROW(softmax(Tensor({2}, {0, std::nan("")}), 0), NumericError);
}

TEST(Ops, LayerNormOverChannels) {
  const Tensor x = random_tensor({1, 4, 2, 2}, 7), w = random_tensor({4}, 8);
  const Tensor out = layer_norm_channels(x, w);
  for (std::size_t y = 0; y < 2; ++y) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 4; ++c) mu += x.at({0, c, y, 1}) / 4;
    for (std::size_t c = 0; c < 4; ++c) var += std::pow(x.at({0, c, y, 1}) - mu, 2) / 4;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.at({0, c, y, 1}), (x.at({0, c, y, 1}) - mu) / std::sqrt(var + 1e-5) * w.at({c}), 1e-12);
    }
  }
}

TEST(Ops, PixelShuffleInvertsUnshuffle) {
  const Tensor x = random_tensor({2, 3, 4, 6}, 9);
  const Tensor u = pixel_unshuffle(x, 2);
  EXPECT_EQ(u.shape(), (Shape{2, 12, 2, 3}));
  // Channel c*4 + i*2 + j holds x[c, 2y+i, 2x+j].
  EXPECT_EQ(u.at({1, 2 * 4 + 1 * 2 + 0, 1, 2}), x.at({1, 2, 3, 4}));
  EXPECT_TRUE(bit_equal(pixel_shuffle(u, 2), x));
  EXPECT_THROW(pixel_unshuffle(random_tensor({1, 1, 3, 4}, 1), 2), ShapeError);
}

TEST(Ops, PadModes) {
  Tensor x({1, 3}, {1, 2, 3});
  EXPECT_TRUE(bit_equal(pad2d(x, 0, 0, 2, 2, PadMode::Replicate), Tensor({1, 7}, {1, 1, 1, 2, 3, 3, 3})));
  EXPECT_TRUE(bit_equal(pad2d(x, 0, 0, 2, 2, PadMode::Reflect), Tensor({1, 7}, {3, 2, 1, 2, 3, 2, 1})));
  EXPECT_THROW(pad2d(x, 0, 0, 3, 0, PadMode::Reflect), ShapeError);
  const Tensor sq = mltest::random_tensor({3, 3}, 2);
  EXPECT_TRUE(bit_equal(crop2d(pad2d(sq, 1, 2, 2, 1, PadMode::Reflect), 1, 2, 3, 3), sq));
}

TEST(Ops, PermuteAndTranspose) {
  const Tensor x = random_tensor({2, 3, 4}, 10);
  const Tensor p = permute(x, {2, 0, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(p.at({3, 1, 2}), x.at({1, 2, 3}));
  EXPECT_EQ(transpose_last2(x).at({1, 3, 2}), x.at({1, 2, 3}));
}

TEST(Ops, GatherScatterAddsInBackward) {
  Tensor x = Tensor({3}, {1, 2, 3}).set_requires_grad(true);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(std::vector<std::uint32_t>{0, 0, 2, 0});
  GradTape tape;
  GradTape::Scope scope(tape);
  const Tensor g = gather(x, idx, {4});
  EXPECT_TRUE(bit_equal(g, Tensor({4}, {1, 1, 3, 1})));
  tape.backward(sum(g));
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Ops, GeluMatchesTanhFormula) {
  for (double v : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double want = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
    EXPECT_NEAR(gelu(Tensor::scalar(v)).item(), want, 1e-15);
  }
}

// Finite-difference checks of every differentiable primitive.
class OpGradient : public ::testing::Test {
 protected:
  void expect_grad(const std::function<Tensor()>& f, std::vector<Tensor*> in) {
    const auto r = grad_check(f, in);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
};

TEST_F(OpGradient, Elementwise) {
  Tensor a = random_tensor({2, 3}, 1), b = random_tensor({1, 3}, 2, 0.5, 1.5);
  expect_grad([&] { return weighted_sum(add(a, b)); }, {&a, &b});
  expect_grad([&] { return weighted_sum(sub(a, b)); }, {&a, &b});
  expect_grad([&] { return weighted_sum(mul(a, b)); }, {&a, &b});
  expect_grad([&] { return weighted_sum(div(a, b)); }, {&a, &b});
  expect_grad([&] { return weighted_sum(one_minus(scale(a, 3.0))); }, {&a});
  expect_grad([&] { return weighted_sum(sigmoid(a)); }, {&a});
  expect_grad([&] { return weighted_sum(gelu(a)); }, {&a});
  expect_grad([&] { return weighted_sum(abs(a)); }, {&a});
}

TEST_F(OpGradient, ReductionsAndLayout) {
  Tensor a = random_tensor({2, 3, 4}, 3);
  expect_grad([&] { return mean(mul(a, a)); }, {&a});
  expect_grad([&] { return weighted_sum(mean_over(a, {0, 2})); }, {&a});
  expect_grad([&] { return weighted_sum(permute(a, {1, 2, 0})); }, {&a});
  expect_grad([&] { return weighted_sum(reshape(transpose_last2(a), {6, 4})); }, {&a});
  expect_grad([&] { return weighted_sum(slice(a, 2, 1, 2)); }, {&a});
  Tensor b = random_tensor({2, 1, 4}, 4);
  expect_grad([&] { const std::array p{a, b}; return weighted_sum(concat(p, 1)); }, {&a, &b});
}

TEST_F(OpGradient, SpatialOps) {
  Tensor x = random_tensor({1, 2, 4, 6}, 5);
  expect_grad([&] { return weighted_sum(pad2d(x, 1, 2, 3, 1, PadMode::Reflect)); }, {&x});
  expect_grad([&] { return weighted_sum(pad2d(x, 2, 0, 0, 2, PadMode::Replicate)); }, {&x});
  expect_grad([&] { return weighted_sum(crop2d(x, 1, 1, 2, 3)); }, {&x});
  expect_grad([&] { return weighted_sum(pixel_unshuffle(x, 2)); }, {&x});
  Tensor y = random_tensor({1, 8, 2, 3}, 6);
  expect_grad([&] { return weighted_sum(pixel_shuffle(y, 2)); }, {&y});
  expect_grad([&] { return weighted_sum(avg_pool(x, PoolSpec::box(3))); }, {&x});
  expect_grad([&] { return weighted_sum(avg_pool(x, PoolSpec::spatial())); }, {&x});
  expect_grad([&] { return weighted_sum(avg_pool(x, PoolSpec::channel())); }, {&x});
}

TEST_F(OpGradient, NetworkPrimitives) {
  Tensor a = random_tensor({2, 3, 4}, 7), b = random_tensor({2, 4, 5}, 8);
  expect_grad([&] { return weighted_sum(matmul(a, b)); }, {&a, &b});
  expect_grad([&] { return weighted_sum(softmax(a, 2)); }, {&a});
  expect_grad([&] { return weighted_sum(softmax(a, 1)); }, {&a});
  Tensor x = random_tensor({2, 3, 3, 4}, 9), w = random_tensor({5, 3}, 10), dw = random_tensor({3, 3, 3}, 11);
  expect_grad([&] { return weighted_sum(conv2d(x, w, ConvMode::Pointwise1x1)); }, {&x, &w});
  expect_grad([&] { return weighted_sum(conv2d(x, dw, ConvMode::Depthwise3x3)); }, {&x, &dw});
  Tensor g = random_tensor({3}, 12, 0.5, 1.5);
  expect_grad([&] { return weighted_sum(layer_norm_channels(x, g)); }, {&x, &g});
  expect_grad([&] { return weighted_sum(l2_normalize_last(a)); }, {&a});
}
