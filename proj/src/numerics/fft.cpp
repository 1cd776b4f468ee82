#include "metalens/numerics/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "metalens/errors.hpp"

namespace metalens::numerics {

namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

struct Radix2Plan {
  std::vector<std::size_t> bitrev;
  std::vector<cd> twiddle;  // exp(-2 pi i k / n), k < n/2
};

struct BluesteinPlan {
  std::size_t m = 0;        // padded power-of-two length
  std::vector<cd> chirp;    // exp(-pi i k^2 / n)
  std::vector<cd> kernel_f; // FFT of the conjugate chirp, wrapped
};

std::mutex g_plan_mutex;
std::map<std::size_t, std::shared_ptr<const Radix2Plan>> g_radix2;
std::map<std::size_t, std::shared_ptr<const BluesteinPlan>> g_bluestein;

std::shared_ptr<const Radix2Plan> radix2_plan(std::size_t n) {
  std::lock_guard lock(g_plan_mutex);
  auto& slot = g_radix2[n];
  if (!slot) {
    auto p = std::make_shared<Radix2Plan>();
    p->bitrev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      p->bitrev[i] = r;
    }
    p->twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      p->twiddle[k] = {std::cos(a), std::sin(a)};
    }
    slot = std::move(p);
  }
  return slot;
}

// Forward (unscaled) radix-2 transform; inverse is obtained by conjugation.
void radix2(std::span<cd> a, const Radix2Plan& plan) {
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = plan.bitrev[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cd w = plan.twiddle[k * step];
        const cd u = a[i + k];
        const cd v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

std::shared_ptr<const BluesteinPlan> bluestein_plan(std::size_t n) {
  {
    std::lock_guard lock(g_plan_mutex);
    auto it = g_bluestein.find(n);
    if (it != g_bluestein.end()) return it->second;
  }
  auto p = std::make_shared<BluesteinPlan>();
  p->m = 1;
  while (p->m < 2 * n - 1) p->m <<= 1;
  p->chirp.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small.
    const std::size_t k2 = (k * k) % (2 * n);
    const double a = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    p->chirp[k] = {std::cos(a), std::sin(a)};
  }
  p->kernel_f.assign(p->m, cd{});
  p->kernel_f[0] = std::conj(p->chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    p->kernel_f[k] = std::conj(p->chirp[k]);
    p->kernel_f[p->m - k] = std::conj(p->chirp[k]);
  }
  radix2(p->kernel_f, *radix2_plan(p->m));
  std::lock_guard lock(g_plan_mutex);
  auto& slot = g_bluestein[n];
  if (!slot) slot = std::move(p);
  return slot;
}

void forward_any(std::span<cd> a) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (is_pow2(n)) {
    radix2(a, *radix2_plan(n));
    return;
  }
  const auto plan = bluestein_plan(n);
  const auto r2 = radix2_plan(plan->m);
  std::vector<cd> buf(plan->m, cd{});
  for (std::size_t k = 0; k < n; ++k) buf[k] = a[k] * plan->chirp[k];
  radix2(buf, *r2);
  for (std::size_t k = 0; k < plan->m; ++k) buf[k] *= plan->kernel_f[k];
  // Inverse via conjugation trick.
  for (auto& v : buf) v = std::conj(v);
  radix2(buf, *r2);
  const double inv_m = 1.0 / static_cast<double>(plan->m);
  for (std::size_t k = 0; k < n; ++k) a[k] = std::conj(buf[k]) * inv_m * plan->chirp[k];
}

}  // namespace

void fft1d(std::span<cd> data, bool inverse) {
  if (!inverse) {
    forward_any(data);
    return;
  }
  for (auto& v : data) v = std::conj(v);
  forward_any(data);
  const double inv_n = data.empty() ? 1.0 : 1.0 / static_cast<double>(data.size());
  for (auto& v : data) v = std::conj(v) * inv_n;
}

void fft2_inplace(std::span<cd> plane, std::size_t rows, std::size_t cols, bool inverse) {
  if (plane.size() != rows * cols) throw ShapeError("fft2: plane size mismatch");
  for (std::size_t r = 0; r < rows; ++r) fft1d(plane.subspan(r * cols, cols), inverse);
  std::vector<cd> column(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = plane[r * cols + c];
    fft1d(column, inverse);
    for (std::size_t r = 0; r < rows; ++r) plane[r * cols + c] = column[r];
  }
}

namespace {

Tensor transform(const Tensor& x, bool inverse) {
  if (x.rank() < 2) throw ShapeError("fft2 needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t H = x.shape()[x.rank() - 2], W = x.shape()[x.rank() - 1];
  std::vector<cd> buf(x.numel());
  if (x.is_complex()) {
    const auto v = x.complex_values();
    std::copy(v.begin(), v.end(), buf.begin());
  } else {
    const auto v = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) buf[i] = v[i];
  }
  for (const auto& v : buf) {
    if (std::isnan(v.real()) || std::isnan(v.imag())) throw NumericError("fft2: NaN input");
  }
  const std::size_t planes = (H * W) != 0 ? buf.size() / (H * W) : 0;
  for (std::size_t p = 0; p < planes; ++p) {
    fft2_inplace(std::span<cd>(buf).subspan(p * H * W, H * W), H, W, inverse);
  }
  return Tensor::from_complex(x.shape(), buf);
}

}  // namespace

Tensor fft2(const Tensor& x) { return transform(x, false); }

Tensor ifft2_complex(const Tensor& spectrum) { return transform(spectrum, true); }

Tensor ifft2(const Tensor& spectrum) {
  const Tensor c = transform(spectrum, true);
  const auto v = c.complex_values();
  std::vector<double> re(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) re[i] = v[i].real();
  return Tensor(c.shape(), std::move(re));
}

}  // namespace metalens::numerics
