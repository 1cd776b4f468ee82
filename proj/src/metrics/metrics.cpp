#include "metalens/metrics/metrics.hpp"

#include <cmath>
#include <limits>

#include "metalens/errors.hpp"
#include "metalens/numerics/fft.hpp"

namespace metalens::metrics {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: " + numerics::shape_str(a.shape()) + " vs " + numerics::shape_str(b.shape()));
  }
  if (a.numel() == 0) throw ContractError("psnr of empty images");
  const auto va = a.values(), vb = b.values();
  double se = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) se += (va[i] - vb[i]) * (va[i] - vb[i]);
  const double mse = se / static_cast<double>(va.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> grayscale(const Tensor& t, std::size_t& H, std::size_t& W) {
  if (t.rank() == 2) {
    H = t.dim(0);
    W = t.dim(1);
    return {t.values().begin(), t.values().end()};
  }
  if (t.rank() != 3) throw ShapeError("ssim expects [H,W] or [C,H,W]");
  const std::size_t C = t.dim(0);
  H = t.dim(1);
  W = t.dim(2);
  std::vector<double> g(H * W, 0.0);
  const auto v = t.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * W; ++i) g[i] += v[c * H * W + i];
  for (auto& e : g) e /= static_cast<double>(C);
  return g;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: image shapes differ");
  std::size_t H, W;
  const auto x = grayscale(a, H, W);
  const auto y = grayscale(b, H, W);
  constexpr std::size_t k = 11;
  if (H < k || W < k) throw ContractError("ssim needs images of at least 11x11");
  double win[k];
  double wsum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    wsum += win[i];
  }
  for (auto& w : win) w /= wsum;
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0.0;
  for (std::size_t y0 = 0; y0 + k <= H; ++y0)
    for (std::size_t x0 = 0; x0 + k <= W; ++x0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double w = win[i] * win[j];
          const double px = x[(y0 + i) * W + x0 + j], py = y[(y0 + i) * W + x0 + j];
          mx += w * px;
          my += w * py;
          sxx += w * px * px;
          syy += w * py * py;
          sxy += w * px * py;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / static_cast<double>((H - k + 1) * (W - k + 1));
}

double highband_energy(const Tensor& x, double cutoff_fraction) {
  if (!(cutoff_fraction > 0.0 && cutoff_fraction < 1.0)) throw ContractError("cutoff fraction must be in (0, 1)");
  if (x.rank() < 2) throw ShapeError("highband_energy needs rank >= 2");
  const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
  const Tensor X = numerics::fft2(x);
  const auto v = X.complex_values();
  const double cutoff = cutoff_fraction * 0.5;
  std::vector<bool> high(H * W);
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t w = 0; w < W; ++w) {
      // Signed frequency in cycles per pixel.
      const double du = static_cast<double>(u), dw = static_cast<double>(w);
      const double fu = (u <= H / 2 ? du : du - static_cast<double>(H)) / static_cast<double>(H);
      const double fw = (w <= W / 2 ? dw : dw - static_cast<double>(W)) / static_cast<double>(W);
      high[u * W + w] = std::sqrt(fu * fu + fw * fw) > cutoff;
    }
  double e = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (high[i % (H * W)]) e += std::norm(v[i]);
  return e;
}

void RestorationReport::aggregate() {
  if (images.empty()) {
    mean_psnr_db = mean_ssim = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double p = 0.0, s = 0.0;
  for (const auto& im : images) {
    p += im.psnr_db;
    s += im.ssim;
  }
  mean_psnr_db = p / static_cast<double>(images.size());
  mean_ssim = s / static_cast<double>(images.size());
}

nlohmann::ordered_json psnr_to_json(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  return db;
}

double psnr_from_json(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

nlohmann::ordered_json RestorationReport::to_json() const {
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& im : images) j["images"].push_back({{"id", im.id}, {"psnr_db", psnr_to_json(im.psnr_db)}, {"ssim", im.ssim}});
  j["aggregate"] = {{"psnr_db", psnr_to_json(mean_psnr_db)}, {"ssim", mean_ssim}};
  j["provenance"] = provenance;
  return j;
}

}  // namespace metalens::metrics
