#include "metalens/optics/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace metalens::optics {

using numerics::Tensor;

Tensor test_card(std::size_t H, std::size_t W) {
  std::vector<double> v(3 * H * W);
  const double cy = 0.5 * static_cast<double>(H), cx = 0.5 * static_cast<double>(W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(H);
      const double fx = static_cast<double>(x) / static_cast<double>(W);
      const bool checker = ((y / 4) + (x / 4)) % 2 == 0;
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double rr = std::sqrt(dy * dy + dx * dx);
      const double chirp = 0.5 + 0.5 * std::cos(rr * rr * 0.02);
      const bool disc = std::hypot(dy + 0.2 * static_cast<double>(H), dx - 0.2 * static_cast<double>(W)) <
                        0.12 * static_cast<double>(std::min(H, W));
      double r = 0.15 + 0.7 * fx;
      double g = checker ? 0.85 : 0.15;
      double b = 0.2 + 0.6 * chirp * fy + 0.2 * (1 - fy);
      if (disc) r = g = b = 0.95;
      const std::size_t i = y * W + x;
      v[i] = std::clamp(r, 0.0, 1.0);
      v[H * W + i] = std::clamp(0.5 * g + 0.5 * chirp, 0.0, 1.0);
      v[2 * H * W + i] = std::clamp(b, 0.0, 1.0);
    }
  return Tensor({3, H, W}, std::move(v));
}

Tensor random_scene(std::uint64_t seed, std::size_t H, std::size_t W) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(3 * H * W);
  const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);

  // Background: per-channel linear gradient.
  double base[3], gy[3], gx[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * u(rng);
    gy[c] = 0.4 * (u(rng) - 0.5);
    gx[c] = 0.4 * (u(rng) - 0.5);
  }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        v[c * H * W + y * W + x] = base[c] + gy[c] * (static_cast<double>(y) / Hd - 0.5) + gx[c] * (static_cast<double>(x) / Wd - 0.5);

  const int shapes = 6 + static_cast<int>(u(rng) * 6);
  for (int s = 0; s < shapes; ++s) {
    const int kind = static_cast<int>(u(rng) * 3);
    const double cy = u(rng) * Hd, cx = u(rng) * Wd;
    const double ry = (0.06 + 0.2 * u(rng)) * Hd, rx = (0.06 + 0.2 * u(rng)) * Wd;
    double col[3];
    for (auto& c : col) c = u(rng);
    const double period = 2.0 + 6.0 * u(rng);
    const double theta = u(rng) * std::numbers::pi;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        bool inside = false;
        double shade = 1.0;
        if (kind == 0) {
          inside = dy * dy + dx * dx <= 1.0;
        } else if (kind == 1) {
          inside = std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        } else {
          inside = std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
          const double t = (static_cast<double>(y) * std::sin(theta) + static_cast<double>(x) * std::cos(theta)) / period;
          shade = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * t);
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) v[c * H * W + y * W + x] = col[c] * shade + (1.0 - shade) * 0.5 * col[(c + 1) % 3];
      }
  }
  for (auto& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor({3, H, W}, std::move(v));
}

}  // namespace metalens::optics
