#include "metalens/io/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "metalens/errors.hpp"

namespace metalens::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

PngImage read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("libpng initialisation failed");
  }
  std::vector<unsigned char> data;
  std::vector<png_bytep> rows;
  png_uint_32 W = 0, H = 0;
  int depth = 0, channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("cannot decode " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian samples
  png_read_update_info(png, info);
  W = png_get_image_width(png, info);
  H = png_get_image_height(png, info);
  depth = png_get_bit_depth(png, info);
  channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  data.resize(stride * H);
  rows.resize(H);
  for (png_uint_32 y = 0; y < H; ++y) rows[y] = data.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t C = static_cast<std::size_t>(channels);
  std::vector<double> v(C * H * W);
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t s = x * C + c;
        const unsigned code = depth == 16 ? static_cast<unsigned>(rows[y][2 * s] | (rows[y][2 * s + 1] << 8))
                                          : static_cast<unsigned>(rows[y][s]);
        v[(c * H + y) * W + x] = static_cast<double>(code) / maxv;
      }
  return {numerics::Tensor({C, H, W}, std::move(v)), depth};
}

void write_png(const std::filesystem::path& path, const numerics::Tensor& pixels, int bit_depth) {
  if (pixels.rank() != 3 || (pixels.dim(0) != 1 && pixels.dim(0) != 3)) {
    throw ShapeError("write_png expects [1|3,H,W], got " + numerics::shape_str(pixels.shape()));
  }
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("PNG bit depth must be 8 or 16");
  const std::size_t C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
  const std::size_t bytes = bit_depth / 8;
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<unsigned char> data(H * W * C * bytes);
  const auto v = pixels.values();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double p = v[(c * H + y) * W + x];
        if (std::isnan(p)) p = 0.0;
        const auto code = static_cast<unsigned>(std::lround(std::clamp(p, 0.0, 1.0) * maxv));
        const std::size_t o = ((y * W + x) * C + c) * bytes;
        if (bytes == 2) {
          data[o] = static_cast<unsigned char>(code >> 8);
          data[o + 1] = static_cast<unsigned char>(code & 0xff);
        } else {
          data[o] = static_cast<unsigned char>(code);
        }
      }

  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot write " + path.string());
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = data.data() + y * W * C * bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("cannot encode " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bit_depth,
               C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace metalens::io
