#include "metalens/optics/render.hpp"

#include <algorithm>
#include <vector>

#include "metalens/errors.hpp"
#include "metalens/numerics/ops.hpp"

namespace metalens::optics {

using numerics::Tensor;

PatchLayout patch_layout(std::size_t height, std::size_t width, GridSize grid) {
  if (grid.rows == 0 || grid.cols == 0) throw ContractError("grid extents must be >= 1");
  PatchLayout l;
  l.patch_h = (height + grid.rows - 1) / grid.rows;
  l.patch_w = (width + grid.cols - 1) / grid.cols;
  l.padded_h = l.patch_h * grid.rows;
  l.padded_w = l.patch_w * grid.cols;
  return l;
}

void convolve_patch(const double* image, double* out, std::size_t height, std::size_t width, std::size_t y0,
                    std::size_t x0, std::size_t ph, std::size_t pw, const double* kernel, std::size_t k,
                    Boundary boundary) {
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t y = 0; y < ph; ++y) std::fill_n(out + (y0 + y) * width + x0, pw, 0.0);
  std::vector<std::size_t> src_col(pw);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double w = kernel[i * k + j];
      if (w == 0.0) continue;
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) - r, dx = static_cast<std::ptrdiff_t>(j) - r;
      for (std::size_t x = 0; x < pw; ++x) {
        if (boundary == Boundary::Circular) {
          const auto p = static_cast<std::ptrdiff_t>(pw);
          src_col[x] = x0 + static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(x) - dx) % p + p) % p);
        } else {
          src_col[x] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(x0 + x) - dx, 0, static_cast<std::ptrdiff_t>(width) - 1));
        }
      }
      for (std::size_t y = 0; y < ph; ++y) {
        std::size_t sy;
        if (boundary == Boundary::Circular) {
          const auto p = static_cast<std::ptrdiff_t>(ph);
          sy = y0 + static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(y) - dy) % p + p) % p);
        } else {
          sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y0 + y) - dy, 0,
                                                                   static_cast<std::ptrdiff_t>(height) - 1));
        }
        const double* row = image + sy * width;
        double* o = out + (y0 + y) * width + x0;
        for (std::size_t x = 0; x < pw; ++x) o[x] += w * row[src_col[x]];
      }
    }
}

namespace {

// Cross-fade weight of a cell spanning [start, start + len) at coordinate p.
double fade_weight(std::ptrdiff_t p, std::ptrdiff_t start, std::ptrdiff_t len, std::size_t overlap) {
  const std::ptrdiff_t d = std::min(p - start, start + len - 1 - p);
  const double w = 0.5 + (static_cast<double>(d) + 0.5) / (2.0 * static_cast<double>(overlap));
  return std::clamp(w, 0.0, 1.0);
}

void render_blended(const double* image, double* out, std::size_t H, std::size_t W, const PsfGrid& grid,
                    const PatchLayout& layout, std::size_t channel, std::size_t overlap) {
  std::vector<double> acc(H * W, 0.0), weight(H * W, 0.0), tmp(H * W, 0.0);
  const std::size_t k = grid.kernel_extent();
  for (std::size_t gr = 0; gr < grid.grid.rows; ++gr)
    for (std::size_t gc = 0; gc < grid.grid.cols; ++gc) {
      const auto y0 = static_cast<std::ptrdiff_t>(gr * layout.patch_h);
      const auto x0 = static_cast<std::ptrdiff_t>(gc * layout.patch_w);
      const auto o = static_cast<std::ptrdiff_t>(overlap);
      const std::size_t ey0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, y0 - o));
      const std::size_t ex0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, x0 - o));
      const std::size_t ey1 = std::min<std::size_t>(H, static_cast<std::size_t>(y0 + static_cast<std::ptrdiff_t>(layout.patch_h) + o));
      const std::size_t ex1 = std::min<std::size_t>(W, static_cast<std::size_t>(x0 + static_cast<std::ptrdiff_t>(layout.patch_w) + o));
      const double* kern = grid.at(gr, gc).taps().values().data() + channel * k * k;
      convolve_patch(image, tmp.data(), H, W, ey0, ex0, ey1 - ey0, ex1 - ex0, kern, k, Boundary::Replicate);
      for (std::size_t y = ey0; y < ey1; ++y) {
        const double wy = fade_weight(static_cast<std::ptrdiff_t>(y), y0, static_cast<std::ptrdiff_t>(layout.patch_h), overlap);
        for (std::size_t x = ex0; x < ex1; ++x) {
          const double w = wy * fade_weight(static_cast<std::ptrdiff_t>(x), x0, static_cast<std::ptrdiff_t>(layout.patch_w), overlap);
          acc[y * W + x] += w * tmp[y * W + x];
          weight[y * W + x] += w;
        }
      }
    }
  for (std::size_t i = 0; i < H * W; ++i) out[i] = acc[i] / weight[i];
}

}  // namespace

Tensor render_aberrated(const Tensor& clean, const PsfGrid& grid, const std::optional<NoiseModel>& noise,
                        const RenderOptions& options) {
  grid.validate();
  if (clean.rank() != 3) throw ShapeError("render expects [C,H,W], got " + numerics::shape_str(clean.shape()));
  const std::size_t C = clean.dim(0), H = clean.dim(1), W = clean.dim(2);
  if (C != grid.channels()) {
    throw ShapeError("image has " + std::to_string(C) + " channels but PSFs have " + std::to_string(grid.channels()));
  }
  const PatchLayout layout = patch_layout(H, W, grid.grid);
  const Tensor padded = (layout.padded_h == H && layout.padded_w == W)
                            ? clean
                            : numerics::pad2d(clean, 0, layout.padded_h - H, 0, layout.padded_w - W,
                                              numerics::PadMode::Replicate);
  const std::size_t Hp = layout.padded_h, Wp = layout.padded_w, k = grid.kernel_extent();
  std::vector<double> out(C * Hp * Wp, 0.0);
  const double* src = padded.values().data();
  for (std::size_t c = 0; c < C; ++c) {
    const double* plane = src + c * Hp * Wp;
    double* dst = out.data() + c * Hp * Wp;
    if (options.blend_overlap > 0) {
      render_blended(plane, dst, Hp, Wp, grid, layout, c, options.blend_overlap);
      continue;
    }
    for (std::size_t gr = 0; gr < grid.grid.rows; ++gr)
      for (std::size_t gc = 0; gc < grid.grid.cols; ++gc) {
        const double* kern = grid.at(gr, gc).taps().values().data() + c * k * k;
        convolve_patch(plane, dst, Hp, Wp, gr * layout.patch_h, gc * layout.patch_w, layout.patch_h, layout.patch_w,
                       kern, k, options.boundary);
      }
  }
  Tensor rendered({C, Hp, Wp}, std::move(out), clean.dtype() == numerics::DType::F32 ? numerics::DType::F32
                                                                                       : numerics::DType::F64);
  if (Hp != H || Wp != W) rendered = numerics::crop2d(rendered, 0, 0, H, W);
  if (noise) rendered = apply_noise(rendered, *noise);
  return rendered;
}

}  // namespace metalens::optics
