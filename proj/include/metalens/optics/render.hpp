#pragma once

#include <optional>

#include "metalens/numerics/tensor.hpp"
#include "metalens/optics/noise.hpp"
#include "metalens/optics/psf.hpp"

namespace metalens::optics {

enum class Boundary {
  /// Each patch is convolved as a torus of its own pixels.
  Circular,
  /// Samples come from the whole image, edge pixels repeated past the border.
  Replicate,
};

struct RenderOptions {
  Boundary boundary = Boundary::Circular;
  /// Width in pixels of a linear cross-fade between neighbouring cells. Zero
  /// keeps hard patch boundaries. Blending always samples with the
  /// replicate rule.
  std::size_t blend_overlap = 0;
};

/// Extent of each patch after padding the image up to a multiple of the grid.
struct PatchLayout {
  std::size_t padded_h = 0, padded_w = 0;
  std::size_t patch_h = 0, patch_w = 0;
};
PatchLayout patch_layout(std::size_t height, std::size_t width, GridSize grid);

/// Direct convolution of one [H,W] plane over the patch rectangle, writing
/// into `out` (same plane layout).
void convolve_patch(const double* image, double* out, std::size_t height, std::size_t width, std::size_t y0,
                    std::size_t x0, std::size_t ph, std::size_t pw, const double* kernel, std::size_t k,
                    Boundary boundary);

/// Spatially varying blur of a [C,H,W] image, one PSF per grid cell, then
/// optional sensor noise over the whole image. Extents not divisible by the
/// grid are replicate-padded at the bottom/right, rendered, and cropped.
numerics::Tensor render_aberrated(const numerics::Tensor& clean, const PsfGrid& grid,
                                  const std::optional<NoiseModel>& noise, const RenderOptions& options = {});

}  // namespace metalens::optics
