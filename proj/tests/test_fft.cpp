#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "metalens/errors.hpp"
#include "metalens/numerics/fft.hpp"
#include "test_support.hpp"

using namespace metalens;
using namespace metalens::numerics;
using cd = std::complex<double>;

namespace {

std::vector<cd> naive_dft(const std::vector<cd>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<cd> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    cd s = 0;
    for (std::size_t j = 0; j < n; ++j) s += x[j] * std::polar(1.0, sign * 2 * std::numbers::pi * double(j * k) / double(n));
    out[k] = inverse ? s / double(n) : s;
  }
  return out;
}

std::vector<cd> random_signal(std::size_t n, std::uint64_t seed) {
  const Tensor t = mltest::random_tensor({2 * n}, seed);
  std::vector<cd> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = {t.values()[2 * i], t.values()[2 * i + 1]};
  return v;
}

}  // namespace

class FftLength : public ::testing::TestWithParam<std::size_t> {};

TEST_P(FftLength, MatchesNaiveDft) {
  const std::size_t n = GetParam();
  for (bool inverse : {false, true}) {
    auto x = random_signal(n, n);
    const auto want = naive_dft(x, inverse);
    fft1d(x, inverse);
    double err = 0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(x[i] - want[i]));
    EXPECT_LT(err, 1e-10 * double(n)) << "n=" << n << " inverse=" << inverse;
  }
}

INSTANTIATE_TEST_SUITE_P(PowersAndOdd, FftLength, ::testing::Values(1, 2, 3, 5, 7, 8, 12, 16, 17, 31, 48, 64, 100));

TEST(Fft2, RoundTripAndRealPart) {
  const Tensor x = mltest::random_tensor({2, 6, 10}, 3);
  const Tensor X = fft2(x);
  EXPECT_TRUE(X.is_complex());
  EXPECT_EQ(X.shape(), x.shape());
  EXPECT_LT(max_abs_diff(ifft2(X), x), 1e-13);
}

TEST(Fft2, Parseval) {
  const Tensor x = mltest::random_tensor({9, 14}, 4);
  double spatial = 0, spectral = 0;
  for (double v : x.values()) spatial += v * v;
  const Tensor spectrum = fft2(x);
  for (auto z : spectrum.complex_values()) spectral += std::norm(z);
  EXPECT_NEAR(spectral / (9.0 * 14.0), spatial, 1e-10 * spatial);
}

TEST(Fft2, ConvolutionTheoremMatchesCircularConvolution) {
  const std::size_t H = 7, W = 8;
  const Tensor a = mltest::random_tensor({H, W}, 5), b = mltest::random_tensor({H, W}, 6);
  const Tensor FA = fft2(a), FB = fft2(b);
  const auto A = FA.complex_values(), B = FB.complex_values();
  std::vector<cd> prod(H * W);
  for (std::size_t i = 0; i < H * W; ++i) prod[i] = A[i] * B[i];
  const Tensor conv = ifft2(Tensor::from_complex({H, W}, prod));
  double err = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) s += a.at({i, j}) * b.at({(y + H - i) % H, (x + W - j) % W});
      err = std::max(err, std::abs(s - conv.at({y, x})));
    }
  EXPECT_LT(err, 1e-12);
}

TEST(Fft2, RejectsNaN) {
  Tensor x({2, 2}, {0, 1, std::nan(""), 2});
  EXPECT_THROW(fft2(x), NumericError);
}
