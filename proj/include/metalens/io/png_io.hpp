#pragma once

#include <filesystem>

#include "metalens/numerics/tensor.hpp"

namespace metalens::io {

struct PngImage {
  numerics::Tensor pixels;  // [C,H,W] in [0,1]; gray is 1 channel, alpha is dropped
  int bit_depth = 8;        // 8 or 16
};

/// Reads 8- or 16-bit gray/RGB(A) PNG; palette and low-depth images are
/// expanded to 8 bits. Raises FormatError on unreadable files.
PngImage read_png(const std::filesystem::path& path);

/// Writes a [C,H,W] tensor (C = 1 or 3) clamped to [0,1] and rounded to the
/// nearest code value. Output bytes depend only on the pixel values.
void write_png(const std::filesystem::path& path, const numerics::Tensor& pixels, int bit_depth = 8);

}  // namespace metalens::io
