#include "metalens/wiener/wiener.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "metalens/errors.hpp"
#include "metalens/json_util.hpp"
#include "metalens/log.hpp"
#include "metalens/numerics/fft.hpp"
#include "metalens/numerics/ops.hpp"
#include "metalens/numerics/tensor_io.hpp"
#include "metalens/optics/render.hpp"

namespace metalens::wiener {

using cd = std::complex<double>;

void FilterBankConfig::validate() const {
  if (m_count < 1) throw ContractError("filter bank needs M >= 1");
  if (!(k_min > 0.0)) throw ContractError("filter bank needs k_min > 0");
  if (!(k_min <= k_max)) throw ContractError("filter bank needs k_min <= k_max");
}

std::vector<double> FilterBankConfig::k_values() const {
  validate();
  std::vector<double> k(m_count);
  if (m_count == 1) {
    k[0] = k_min;
    return k;
  }
  const double ratio = k_max / k_min;
  for (std::size_t m = 0; m < m_count; ++m) {
    k[m] = k_min * std::pow(ratio, static_cast<double>(m) / static_cast<double>(m_count - 1));
  }
  k.front() = k_min;
  k.back() = k_max;
  return k;
}

nlohmann::ordered_json to_json(const FilterBankConfig& c) {
  nlohmann::ordered_json j;
  j["m_count"] = c.m_count;
  j["k_min"] = c.k_min;
  j["k_max"] = c.k_max;
  j["adaptive"] = c.adaptive;
  j["patchwise"] = c.patchwise;
  return j;
}

FilterBankConfig filter_bank_from_json(const nlohmann::json& j) {
  require_known_keys(j, {"m_count", "k_min", "k_max", "adaptive", "patchwise"}, "filter bank config");
  FilterBankConfig c;
  read_optional(j, "m_count", c.m_count);
  read_optional(j, "k_min", c.k_min);
  read_optional(j, "k_max", c.k_max);
  read_optional(j, "adaptive", c.adaptive);
  read_optional(j, "patchwise", c.patchwise);
  c.validate();
  return c;
}

std::vector<double> channel_intensity(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("channel_intensity expects [C,H,W]");
  const std::size_t C = image.dim(0), plane = image.dim(1) * image.dim(2);
  if (C == 0 || plane == 0) throw ContractError("channel_intensity of an empty image");
  const auto v = image.values();
  std::vector<double> c_i(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += v[c * plane + i];
    c_i[c] = s / static_cast<double>(plane);
  }
  return c_i;
}

Tensor transfer_function(const PsfKernel& psf, std::size_t H, std::size_t W) {
  const std::size_t C = psf.channels(), k = psf.extent();
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto taps = psf.taps().values();
  std::vector<cd> buf(C * H * W, cd{});
  const auto sH = static_cast<std::ptrdiff_t>(H), sW = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double w = taps[(c * k + i) * k + j];
        if (w == 0.0) continue;
        const auto y = ((static_cast<std::ptrdiff_t>(i) - r) % sH + sH) % sH;
        const auto x = ((static_cast<std::ptrdiff_t>(j) - r) % sW + sW) % sW;
        buf[c * H * W + static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] += w;
      }
    numerics::fft2_inplace(std::span<cd>(buf).subspan(c * H * W, H * W), H, W, false);
  }
  return Tensor::from_complex({C, H, W}, buf);
}

WienerFilter build_filter(const Tensor& transfer, double k, const std::optional<std::vector<double>>& intensity,
                          std::string source_psf_id) {
  if (!transfer.is_complex() || transfer.rank() != 3) throw ShapeError("transfer function must be complex [C,H,W]");
  const std::size_t C = transfer.dim(0), plane = transfer.dim(1) * transfer.dim(2);
  WienerFilter f;
  f.k_value = k;
  f.source_psf_id = std::move(source_psf_id);
  f.penalty.assign(C, k);
  if (intensity) {
    if (intensity->size() != C) throw ShapeError("c_I has the wrong number of channels");
    for (std::size_t c = 0; c < C; ++c) f.penalty[c] = k * (1.0 - (*intensity)[c]);
  } else if (!(k > 0.0)) {
    throw ContractError("non-adaptive Wiener filter needs K > 0");
  }
  const auto H = transfer.complex_values();
  std::vector<cd> w(H.size());
  for (std::size_t c = 0; c < C; ++c) {
    const double p = f.penalty[c];
    for (std::size_t i = 0; i < plane; ++i) {
      const cd h = H[c * plane + i];
      const double denom = std::norm(h) + p;
      if (denom == 0.0) {
        w[c * plane + i] = 0.0;
        ++f.null_bins;
      } else {
        w[c * plane + i] = std::conj(h) / denom;
      }
    }
  }
  if (f.null_bins) {
    log::warn("degenerate Wiener filter" + (f.source_psf_id.empty() ? std::string() : " for " + f.source_psf_id) +
              ": zero penalty at " + std::to_string(f.null_bins) + " null frequencies, response set to 0 there");
  }
  f.response = Tensor::from_complex(transfer.shape(), w);
  return f;
}

WienerFilter build_filter(const PsfKernel& psf, std::size_t height, std::size_t width, double k,
                          const std::optional<std::vector<double>>& intensity, std::string source_psf_id) {
  return build_filter(transfer_function(psf, height, width), k, intensity, std::move(source_psf_id));
}

namespace {

// Applies the filter to one [C,h,w] block stored in spectrum form.
void apply_response(std::span<const cd> response, std::span<cd> spectrum) {
  for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= response[i];
}

double finite_or_clamped(double v) {
  if (std::isnan(v)) return 0.0;
  constexpr double kMax = std::numeric_limits<double>::max();
  return std::clamp(v, -kMax, kMax);
}

}  // namespace

Tensor deconvolve(const Tensor& observed, const WienerFilter& filter) {
  if (observed.rank() != 3 || observed.shape() != filter.response.shape()) {
    throw ShapeError("filter extents " + numerics::shape_str(filter.response.shape()) + " do not match image " +
                     numerics::shape_str(observed.shape()));
  }
  const std::size_t C = observed.dim(0), H = observed.dim(1), W = observed.dim(2);
  const auto v = observed.values();
  std::vector<cd> buf(v.begin(), v.end());
  const auto resp = filter.response.complex_values();
  for (std::size_t c = 0; c < C; ++c) {
    auto plane = std::span<cd>(buf).subspan(c * H * W, H * W);
    numerics::fft2_inplace(plane, H, W, false);
    apply_response(resp.subspan(c * H * W, H * W), plane);
    numerics::fft2_inplace(plane, H, W, true);
  }
  std::vector<double> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = finite_or_clamped(buf[i].real());
  return Tensor(observed.shape(), std::move(out));
}

Tensor DeconvStack::as_tensor() const {
  if (images.empty()) throw ContractError("empty deconvolution stack");
  numerics::Shape s = images.front().shape();
  std::vector<double> v;
  v.reserve(images.size() * images.front().numel());
  for (const auto& img : images) {
    if (img.shape() != s) throw ShapeError("stack images differ in shape");
    v.insert(v.end(), img.values().begin(), img.values().end());
  }
  s.insert(s.begin(), images.size());
  return Tensor(std::move(s), std::move(v));
}

DeconvStack deconvolve_bank(const Tensor& observed, const PsfKernel& psf, const FilterBankConfig& config) {
  config.validate();
  if (observed.rank() != 3) throw ShapeError("deconvolve_bank expects [C,H,W]");
  if (observed.dim(0) != psf.channels()) throw ShapeError("image and PSF channel counts differ");
  DeconvStack stack;
  stack.k_values = config.k_values();
  stack.median_index = config.median_index();
  const std::optional<std::vector<double>> c_i =
      config.adaptive ? std::optional(channel_intensity(observed)) : std::nullopt;
  const Tensor transfer = transfer_function(psf, observed.dim(1), observed.dim(2));
  for (double k : stack.k_values) stack.images.push_back(deconvolve(observed, build_filter(transfer, k, c_i)));
  return stack;
}

DeconvStack deconvolve_patchwise(const Tensor& observed, const PsfGrid& grid, const FilterBankConfig& config) {
  config.validate();
  grid.validate();
  if (observed.rank() != 3) throw ShapeError("deconvolve_patchwise expects [C,H,W]");
  const std::size_t C = observed.dim(0), H = observed.dim(1), W = observed.dim(2);
  if (C != grid.channels()) throw ShapeError("image and PSF channel counts differ");
  const auto layout = optics::patch_layout(H, W, grid.grid);
  const std::size_t Hp = layout.padded_h, Wp = layout.padded_w, ph = layout.patch_h, pw = layout.patch_w;
  const Tensor padded =
      (Hp == H && Wp == W) ? observed
                           : numerics::pad2d(observed, 0, Hp - H, 0, Wp - W, numerics::PadMode::Replicate);
  const std::optional<std::vector<double>> c_i =
      config.adaptive ? std::optional(channel_intensity(observed)) : std::nullopt;

  DeconvStack stack;
  stack.k_values = config.k_values();
  stack.median_index = config.median_index();
  const std::size_t M = stack.k_values.size();
  std::vector<std::vector<double>> outs(M, std::vector<double>(C * Hp * Wp));
  const auto src = padded.values();
  std::vector<double> patch(C * ph * pw);
  for (std::size_t gr = 0; gr < grid.grid.rows; ++gr)
    for (std::size_t gc = 0; gc < grid.grid.cols; ++gc) {
      const std::size_t y0 = gr * ph, x0 = gc * pw;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x) patch[(c * ph + y) * pw + x] = src[(c * Hp + y0 + y) * Wp + x0 + x];
      const Tensor patch_t({C, ph, pw}, patch);
      const Tensor transfer = transfer_function(grid.at(gr, gc), ph, pw);
      const std::string id = "cell(" + std::to_string(gr) + "," + std::to_string(gc) + ")";
      for (std::size_t m = 0; m < M; ++m) {
        const Tensor dec = deconvolve(patch_t, build_filter(transfer, stack.k_values[m], c_i, id));
        const auto dv = dec.values();
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x) outs[m][(c * Hp + y0 + y) * Wp + x0 + x] = dv[(c * ph + y) * pw + x];
      }
    }
  for (auto& o : outs) {
    Tensor img({C, Hp, Wp}, std::move(o));
    if (Hp != H || Wp != W) img = numerics::crop2d(img, 0, 0, H, W);
    stack.images.push_back(std::move(img));
  }
  return stack;
}

DeconvStack deconvolve_for(const Tensor& observed, const PsfGrid& grid, const FilterBankConfig& config) {
  if (config.patchwise) return deconvolve_patchwise(observed, grid, config);
  return deconvolve_bank(observed, grid.at(grid.grid.rows / 2, grid.grid.cols / 2), config);
}

SeamDiagnostic seam_diagnostic(const Tensor& a, const Tensor& b, optics::GridSize grid) {
  if (a.shape() != b.shape() || a.rank() != 3) throw ShapeError("seam_diagnostic expects matching [C,H,W]");
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  const auto layout = optics::patch_layout(H, W, grid);
  const auto va = a.values(), vb = b.values();
  double seam = 0, inner = 0;
  std::size_t n_seam = 0, n_inner = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t py = y % layout.patch_h, px = x % layout.patch_w;
        const bool border = py == 0 || px == 0 || py + 1 == layout.patch_h || px + 1 == layout.patch_w;
        const double d = va[(c * H + y) * W + x] - vb[(c * H + y) * W + x];
        if (border) {
          seam += d * d;
          ++n_seam;
        } else {
          inner += d * d;
          ++n_inner;
        }
      }
  return {n_seam ? std::sqrt(seam / static_cast<double>(n_seam)) : 0.0,
          n_inner ? std::sqrt(inner / static_cast<double>(n_inner)) : 0.0};
}

void save_deconv_stack(const std::filesystem::path& path, const DeconvStack& stack) {
  numerics::save_tensor(path, stack.as_tensor());
  nlohmann::ordered_json j;
  j["k_values"] = stack.k_values;
  j["median_index"] = stack.median_index;
  auto side = path;
  side += ".json";
  std::ofstream out(side, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + side.string());
  out << j.dump(2) << '\n';
}

DeconvStack load_deconv_stack(const std::filesystem::path& path) {
  const Tensor t = numerics::load_tensor(path);
  if (t.rank() != 4) throw FormatError("deconvolution stack must be [M,C,H,W]");
  auto side = path;
  side += ".json";
  std::ifstream in(side);
  if (!in) throw FormatError("missing stack sidecar " + side.string());
  const auto j = nlohmann::json::parse(in);
  DeconvStack s;
  s.k_values = j.at("k_values").get<std::vector<double>>();
  s.median_index = j.at("median_index").get<std::size_t>();
  const std::size_t M = t.dim(0), per = t.numel() / M;
  if (s.k_values.size() != M || s.median_index >= M) throw FormatError("stack sidecar does not match tensor");
  const Tensor t64 = t.to(numerics::DType::F64);
  const auto v = t64.values();
  for (std::size_t m = 0; m < M; ++m) {
    s.images.emplace_back(numerics::Shape{t.dim(1), t.dim(2), t.dim(3)},
                          std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(m * per),
                                              v.begin() + static_cast<std::ptrdiff_t>((m + 1) * per)));
  }
  return s;
}

}  // namespace metalens::wiener
