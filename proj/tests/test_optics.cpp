#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "metalens/errors.hpp"
#include "metalens/numerics/fft.hpp"
#include "metalens/optics/noise.hpp"
#include "metalens/optics/psf.hpp"
#include "metalens/optics/render.hpp"
#include "metalens/optics/scene.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace metalens;
using namespace metalens::optics;
using numerics::Shape;
using numerics::Tensor;
using mltest::oracle::patchwise_oracle;

namespace {

double patch_sum(const Tensor& t, std::size_t c, std::size_t y0, std::size_t x0, std::size_t ph, std::size_t pw) {
  double s = 0;
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x) s += t.at({c, y0 + y, x0 + x});
  return s;
}

}  // namespace

TEST(PsfKernel, ValidatesInvariants) {
  EXPECT_THROW(PsfKernel(Tensor::full({1, 4, 4}, 1.0 / 16)), ContractError);
  std::vector<double> neg(9, 0.0);
  neg[0] = -0.5;
  neg[1] = 1.5;
  EXPECT_THROW(PsfKernel(Tensor({1, 3, 3}, neg)), ContractError);
  EXPECT_THROW(PsfKernel(Tensor::full({1, 3, 3}, 0.2)), ContractError);
  const auto d = PsfKernel::dirac(3, 5);
  EXPECT_EQ(d.tap(1, 2, 2), 1.0);
  EXPECT_EQ(d.second_moment(), 0.0);
}

TEST(SynthPsf, SeverityZeroGivesDiracEverywhere) {
  const auto g = synth_psf_grid(123, {9, 9}, 15, 0.0);
  ASSERT_EQ(g.kernels.size(), 81u);
  for (const auto& k : g.kernels) EXPECT_TRUE(numerics::bit_equal(k.taps(), PsfKernel::dirac(3, 15).taps()));
}

TEST(SynthPsf, CornerBlursMoreThanCentre) {
  const auto g = synth_psf_grid(5, {9, 9}, 31, 1.0);
  EXPECT_GT(g.at(0, 0).second_moment(), g.at(4, 4).second_moment());
  EXPECT_GT(g.at(8, 8).second_moment(), g.at(4, 4).second_moment());
  for (const auto& k : g.kernels) {
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 31; ++i)
        for (std::size_t j = 0; j < 31; ++j) {
          EXPECT_GE(k.tap(c, i, j), 0.0);
          s += k.tap(c, i, j);
        }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(SynthPsf, ChannelsDifferAtTheCorner) {
  const auto g = synth_psf_grid(5, {9, 9}, 31, 1.0);
  const auto& t = g.at(0, 8).taps();
  EXPECT_FALSE(numerics::bit_equal(numerics::slice(t, 0, 0, 1), numerics::slice(t, 0, 1, 1)));
}

TEST(SynthPsf, FieldAngleGrowsRadially) {
  const auto g = synth_psf_grid(1, {9, 9}, 9, 1.0);
  auto angle = [&](std::size_t r, std::size_t c) { return g.field_angle_deg[r * 9 + c]; };
  EXPECT_EQ(angle(4, 4), 0.0);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 9; ++c) {
      const double dr = std::abs(double(r) - 4), dc = std::abs(double(c) - 4);
      // Moving one cell outward never decreases the angle.
      if (r < 4) EXPECT_GE(angle(r, c) + 1e-12, angle(r + 1, c));
      if (c > 4) EXPECT_GE(angle(r, c) + 1e-12, angle(r, c - 1));
      (void)dr;
      (void)dc;
    }
  EXPECT_NEAR(angle(0, 0), 20.0, 1e-12);
}

TEST(SynthPsf, DeterministicPerSeedAndRejectsEvenKernels) {
  const auto a = synth_psf_grid(77, {3, 3}, 11, 1.0), b = synth_psf_grid(77, {3, 3}, 11, 1.0);
  const auto c = synth_psf_grid(78, {3, 3}, 11, 1.0);
  EXPECT_TRUE(numerics::bit_equal(a.to_tensor(), b.to_tensor()));
  EXPECT_FALSE(numerics::bit_equal(a.to_tensor(), c.to_tensor()));
  EXPECT_THROW(synth_psf_grid(1, {3, 3}, 10, 1.0), ContractError);
  EXPECT_THROW(synth_psf_grid(1, {3, 3}, 11, -1.0), ContractError);
}

TEST(PsfFile, RoundTripWithSidecar) {
  const auto dir = mltest::temp_dir("psf_file");
  const auto g = synth_psf_grid(3, {3, 2}, 7, 0.8);
  save_psf_grid(dir / "g.mltn", g);
  EXPECT_TRUE(std::filesystem::exists(psf_sidecar_path(dir / "g.mltn")));
  const auto back = load_psf_grid(dir / "g.mltn");
  EXPECT_EQ(back.grid, g.grid);
  EXPECT_TRUE(numerics::bit_equal(back.to_tensor(), g.to_tensor()));
  EXPECT_EQ(back.field_angle_deg, g.field_angle_deg);
  EXPECT_EQ(back.seed, 3u);
}

TEST(Render, DiracGridIsBitExactIdentity) {
  const Tensor img = test_card(45, 36);
  const auto g = PsfGrid::uniform(PsfKernel::dirac(3, 9), {9, 9});
  EXPECT_TRUE(numerics::bit_equal(render_aberrated(img, g, std::nullopt), img));
  RenderOptions rep;
  rep.boundary = Boundary::Replicate;
  EXPECT_TRUE(numerics::bit_equal(render_aberrated(img, g, std::nullopt, rep), img));
}

TEST(Render, ThreeByThreeGridMatchesNestedLoops) {
  const Tensor img = random_scene(4, 48, 48);
  const auto g = synth_psf_grid(9, {3, 3}, 7, 1.0);
  EXPECT_LT(numerics::max_abs_diff(render_aberrated(img, g, std::nullopt), patchwise_oracle(img, g)), 1e-12);
}

TEST(Render, SingleCellMatchesFftConvolution) {
  const std::size_t H = 20, W = 24;
  const Tensor img = random_scene(2, H, W);
  const auto kernel = synth_psf_grid(3, {3, 3}, 9, 1.0).at(0, 0);
  const Tensor out = render_aberrated(img, PsfGrid::uniform(kernel, {1, 1}), std::nullopt);
  double err = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> psf(H * W, 0.0);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j) psf[((i + H - 4) % H) * W + (j + W - 4) % W] += kernel.tap(c, i, j);
    const Tensor P = numerics::fft2(Tensor({H, W}, psf));
    const Tensor X = numerics::fft2(numerics::reshape(numerics::slice(img, 0, c, 1), {H, W}));
    std::vector<std::complex<double>> prod(H * W);
    for (std::size_t i = 0; i < H * W; ++i) prod[i] = P.complex_values()[i] * X.complex_values()[i];
    const Tensor conv = numerics::ifft2(Tensor::from_complex({H, W}, prod));
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) err = std::max(err, std::abs(conv.at({y, x}) - out.at({c, y, x})));
  }
  EXPECT_LT(err, 1e-5);
}

TEST(Render, CircularPatchesConserveEnergy) {
  const Tensor img = random_scene(8, 36, 36);
  const auto g = synth_psf_grid(2, {3, 3}, 9, 1.0);
  const Tensor out = render_aberrated(img, g, std::nullopt);
  for (std::size_t gr = 0; gr < 3; ++gr)
    for (std::size_t gc = 0; gc < 3; ++gc)
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = patch_sum(img, c, gr * 12, gc * 12, 12, 12), b = patch_sum(out, c, gr * 12, gc * 12, 12, 12);
        EXPECT_NEAR(b, a, 1e-5 * a);
      }
}

TEST(Render, ChangingOneCellOnlyAltersItsPatch) {
  const Tensor img = random_scene(6, 30, 30);
  auto g = synth_psf_grid(4, {3, 3}, 7, 1.0);
  const Tensor before = render_aberrated(img, g, std::nullopt);
  g.kernels[1 * 3 + 2] = gaussian_kernel(3, 7, 1.3);
  const Tensor after = render_aberrated(img, g, std::nullopt);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 30; ++y)
      for (std::size_t x = 0; x < 30; ++x) {
        const bool inside = y / 10 == 1 && x / 10 == 2;
        if (!inside) EXPECT_EQ(before.at({c, y, x}), after.at({c, y, x}));
      }
  EXPECT_GT(numerics::max_abs_diff(before, after), 1e-3);
}

TEST(Render, NonDivisibleExtentsArePaddedAndCropped) {
  const Tensor img = random_scene(3, 31, 29);
  const auto g = synth_psf_grid(5, {3, 3}, 5, 1.0);
  const Tensor out = render_aberrated(img, g, std::nullopt);
  EXPECT_EQ(out.shape(), img.shape());
  const auto id = PsfGrid::uniform(PsfKernel::dirac(3, 5), {4, 3});
  EXPECT_TRUE(numerics::bit_equal(render_aberrated(img, id, std::nullopt), img));
}

TEST(Render, BlendedCellsVaryContinuously) {
  const Tensor img = Tensor::full({3, 24, 24}, 0.5);
  const auto g = synth_psf_grid(5, {3, 3}, 5, 1.0);
  RenderOptions opt;
  opt.blend_overlap = 3;
  // A constant image stays constant under any normalised blur and any blend.
  EXPECT_LT(numerics::max_abs_diff(render_aberrated(img, g, std::nullopt, opt), img), 1e-12);
}

TEST(Render, ChannelMismatchIsAShapeError) {
  const auto g = PsfGrid::uniform(PsfKernel::dirac(3, 3), {1, 1});
  EXPECT_THROW(render_aberrated(Tensor::zeros({1, 8, 8}), g, std::nullopt), ShapeError);
}

TEST(Noise, ZeroInputWithoutGaussianStaysZero) {
  const Tensor y = apply_noise(Tensor::zeros({1, 8, 8}), {0.0, 4e-5, 1});
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Noise, PoissonMeanIsUnbiased) {
  const double x = 0.3, sp = 1e-3;
  const Tensor y = apply_noise(Tensor::full({100000}, x), {0.0, sp, 42});
  double m = 0;
  for (double v : y.values()) m += v / 1e5;
  const double se = std::sqrt(x * sp / 1e5);  // Var[sp * Poisson(x / sp)] = sp * x
  EXPECT_NEAR(m, x, 3 * se);
}

TEST(Noise, SeedDeterminesRealisation) {
  const Tensor x = random_scene(1, 16, 16);
  const NoiseModel a{1e-5, 4e-5, 9}, b{1e-5, 4e-5, 10};
  EXPECT_TRUE(numerics::bit_equal(apply_noise(x, a), apply_noise(x, a)));
  EXPECT_FALSE(numerics::bit_equal(apply_noise(x, a), apply_noise(x, b)));
  const Tensor noisy = apply_noise(x, a);
  for (double v : noisy.values()) EXPECT_GE(v, 0.0);
}

TEST(Noise, RejectsNegativeInputsAndBadModels) {
  EXPECT_THROW(apply_noise(Tensor({2}, {0.1, -0.1}), {}), ContractError);
  EXPECT_THROW(apply_noise(Tensor({1}, {0.1}), {-1.0, 4e-5, 0}), ContractError);
  EXPECT_THROW(apply_noise(Tensor({1}, {0.1}), {1e-5, 0.0, 0}), ContractError);
  const NoiseModel defaults;
  EXPECT_EQ(defaults.sigma_g, 1e-5);
  EXPECT_EQ(defaults.sigma_p, 4e-5);
}
