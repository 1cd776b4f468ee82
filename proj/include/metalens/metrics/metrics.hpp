#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "metalens/numerics/tensor.hpp"

namespace metalens::metrics {

using numerics::Tensor;

/// 10 log10(peak^2 / MSE); identical inputs give +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Single-scale SSIM of the channel-mean grayscale images: 11x11 Gaussian
/// window (sigma 1.5), C1 = (0.01 peak)^2, C2 = (0.03 peak)^2, averaged
/// over valid window positions. Accepts [H,W] or [C,H,W].
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Sum of |fft2(x)|^2 over bins whose radial frequency exceeds
/// cutoff_fraction * Nyquist, summed over channels.
double highband_energy(const Tensor& x, double cutoff_fraction);

struct ImageScore {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct RestorationReport {
  std::vector<ImageScore> images;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  /// Fills the aggregates with arithmetic means of the per-image values.
  void aggregate();
  nlohmann::ordered_json to_json() const;
};

/// PSNR values are written as numbers, except +infinity which is written
/// as the string "inf" (JSON has no infinity literal).
nlohmann::ordered_json psnr_to_json(double db);
double psnr_from_json(const nlohmann::json& j);

}  // namespace metalens::metrics
