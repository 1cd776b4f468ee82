#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "metalens/numerics/tensor.hpp"
#include "metalens/optics/psf.hpp"

namespace metalens::wiener {

using numerics::Tensor;
using optics::PsfGrid;
using optics::PsfKernel;

/// Log-spaced bank of noise penalties k_1 < ... < k_M.
struct FilterBankConfig {
  std::size_t m_count = 13;
  double k_min = 1e-5;
  double k_max = 1e-2;
  bool adaptive = true;
  bool patchwise = true;

  void validate() const;
  /// k_m = k_min * (k_max / k_min)^((m-1)/(M-1)), ascending.
  std::vector<double> k_values() const;
  /// floor((M-1)/2): the 7th of 13 filters.
  std::size_t median_index() const { return (m_count - 1) / 2; }

  bool operator==(const FilterBankConfig&) const = default;
};

nlohmann::ordered_json to_json(const FilterBankConfig& config);
/// Strict parse: unknown keys raise ContractError; missing keys keep defaults.
FilterBankConfig filter_bank_from_json(const nlohmann::json& j);

/// Per-channel mean intensity c_I of a [C,H,W] image.
std::vector<double> channel_intensity(const Tensor& image);

/// Optical transfer function: the PSF zero-padded (wrapped when larger) to
/// [H,W] with its centre tap at the origin, transformed per channel.
Tensor transfer_function(const PsfKernel& psf, std::size_t height, std::size_t width);

struct WienerFilter {
  Tensor response;               // C128 [C,H,W]
  double k_value = 0.0;          // the bank's k_m, or K for the plain filter
  std::vector<double> penalty;   // effective per-channel penalty
  std::string source_psf_id;
  std::size_t null_bins = 0;     // bins forced to zero (zero penalty, H == 0)
};

/// W = conj(H) / (|H|^2 + penalty), with penalty = k when `intensity` is
/// absent and k * (1 - c_I) per channel otherwise. At bins where both the
/// penalty and H vanish the response is set to zero and a warning is logged.
WienerFilter build_filter(const PsfKernel& psf, std::size_t height, std::size_t width, double k,
                          const std::optional<std::vector<double>>& intensity, std::string source_psf_id = {});

/// Same, from a precomputed transfer function.
WienerFilter build_filter(const Tensor& transfer, double k, const std::optional<std::vector<double>>& intensity,
                          std::string source_psf_id = {});

/// real(ifft2(W .* fft2(observed))) per channel; non-finite results are
/// replaced by finite values, the range is not clamped.
Tensor deconvolve(const Tensor& observed, const WienerFilter& filter);

struct DeconvStack {
  std::vector<Tensor> images;  // one [C,H,W] per k, ascending k
  std::vector<double> k_values;
  std::size_t median_index = 0;

  const Tensor& median() const { return images.at(median_index); }
  std::size_t size() const { return images.size(); }
  /// [M,C,H,W]
  Tensor as_tensor() const;
};

/// One Wiener deconvolution per k_m using a single PSF for the whole image.
/// Adaptive banks measure c_I on `observed`.
DeconvStack deconvolve_bank(const Tensor& observed, const PsfKernel& psf, const FilterBankConfig& config);

/// Spatially varying counterpart: every grid patch is inverted with its own
/// cell's bank under the circular per-patch rule and written back in place.
/// c_I is measured once on the whole observation.
DeconvStack deconvolve_patchwise(const Tensor& observed, const PsfGrid& grid, const FilterBankConfig& config);

/// Dispatches on `config.patchwise`; a non-patchwise bank over a grid uses
/// the centre cell's PSF.
DeconvStack deconvolve_for(const Tensor& observed, const PsfGrid& grid, const FilterBankConfig& config);

/// RMS difference between two [C,H,W] images, split into pixels on patch
/// borders and pixels strictly inside patches.
struct SeamDiagnostic {
  double seam_rms = 0.0;
  double interior_rms = 0.0;
};
SeamDiagnostic seam_diagnostic(const Tensor& a, const Tensor& b, optics::GridSize grid);

/// MLTN [M,C,H,W] at `path`, sidecar {"k_values", "median_index"} at path + ".json".
void save_deconv_stack(const std::filesystem::path& path, const DeconvStack& stack);
DeconvStack load_deconv_stack(const std::filesystem::path& path);

}  // namespace metalens::wiener
