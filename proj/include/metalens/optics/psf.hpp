#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "metalens/numerics/tensor.hpp"

namespace metalens::optics {

using numerics::Tensor;

struct GridSize {
  std::size_t rows = 9;
  std::size_t cols = 9;

  std::size_t cells() const { return rows * cols; }
  bool operator==(const GridSize&) const = default;
};

/// Per-channel blur kernel, taps [C, k, k] with k odd. Each channel is
/// non-negative and sums to one.
class PsfKernel {
 public:
  PsfKernel() = default;
  explicit PsfKernel(Tensor taps);

  static PsfKernel dirac(std::size_t channels, std::size_t extent);

  const Tensor& taps() const { return taps_; }
  std::size_t channels() const { return taps_.dim(0); }
  std::size_t extent() const { return taps_.dim(1); }
  double tap(std::size_t c, std::size_t i, std::size_t j) const;

  /// Mean over channels of sum(w * r^2), r measured from the centre tap.
  double second_moment() const;

 private:
  Tensor taps_;
};

/// Field-dependent PSFs on a rows x cols patch grid (row-major cells).
struct PsfGrid {
  GridSize grid;
  std::vector<PsfKernel> kernels;
  std::vector<double> field_angle_deg;
  double severity = 0.0;
  std::uint64_t seed = 0;

  const PsfKernel& at(std::size_t row, std::size_t col) const { return kernels[row * grid.cols + col]; }
  std::size_t kernel_extent() const { return kernels.front().extent(); }
  std::size_t channels() const { return kernels.front().channels(); }

  /// A grid holding the same kernel in every cell.
  static PsfGrid uniform(const PsfKernel& kernel, GridSize grid);

  /// Checks the structural invariants; throws ContractError.
  void validate() const;

  /// [rows, cols, C, k, k] tensor.
  Tensor to_tensor() const;
};

struct PsfSynthesisOptions {
  std::size_t channels = 3;
  double max_field_angle_deg = 20.0;
};

/// Synthetic metalens-like PSF grid. Each cell mixes a per-channel defocus
/// disc (radius grows with field angle and differs by channel) with a
/// radially oriented smear whose length grows with field angle. Both scale
/// with `severity`; severity 0 gives Dirac kernels everywhere.
PsfGrid synth_psf_grid(std::uint64_t seed, GridSize grid, std::size_t kernel_extent, double severity,
                       const PsfSynthesisOptions& options = {});

/// Isotropic Gaussian kernel replicated over channels.
PsfKernel gaussian_kernel(std::size_t channels, std::size_t extent, double sigma);

/// Writes the MLTN tensor at `path` and the JSON sidecar at `path` + ".json".
void save_psf_grid(const std::filesystem::path& path, const PsfGrid& grid);
PsfGrid load_psf_grid(const std::filesystem::path& path);

std::filesystem::path psf_sidecar_path(const std::filesystem::path& path);

}  // namespace metalens::optics
