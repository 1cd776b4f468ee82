#include "metalens/optics/psf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "metalens/errors.hpp"
#include "metalens/numerics/tensor_io.hpp"

namespace metalens::optics {

using numerics::DType;
using numerics::Shape;

PsfKernel::PsfKernel(Tensor taps) : taps_(std::move(taps)) {
  const auto& s = taps_.shape();
  if (s.size() != 3 || s[1] != s[2]) throw ShapeError("PSF taps must be [C,k,k], got " + numerics::shape_str(s));
  if (s[1] % 2 == 0) throw ContractError("PSF extent must be odd");
  const std::size_t plane = s[1] * s[2];
  const auto v = taps_.values();
  for (std::size_t c = 0; c < s[0]; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double w = v[c * plane + i];
      if (!(w >= 0.0)) throw ContractError("PSF taps must be non-negative and finite");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ContractError("PSF channel does not sum to one");
  }
}

PsfKernel PsfKernel::dirac(std::size_t channels, std::size_t extent) {
  if (extent % 2 == 0) throw ContractError("PSF extent must be odd");
  std::vector<double> v(channels * extent * extent, 0.0);
  const std::size_t r = extent / 2;
  for (std::size_t c = 0; c < channels; ++c) v[c * extent * extent + r * extent + r] = 1.0;
  return PsfKernel(Tensor({channels, extent, extent}, std::move(v)));
}

double PsfKernel::tap(std::size_t c, std::size_t i, std::size_t j) const { return taps_.at({c, i, j}); }

double PsfKernel::second_moment() const {
  const std::size_t C = channels(), k = extent();
  const double r = static_cast<double>(k / 2);
  const auto v = taps_.values();
  double m = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double dy = static_cast<double>(i) - r, dx = static_cast<double>(j) - r;
        m += v[(c * k + i) * k + j] * (dy * dy + dx * dx);
      }
  return m / static_cast<double>(C);
}

PsfGrid PsfGrid::uniform(const PsfKernel& kernel, GridSize grid) {
  PsfGrid g;
  g.grid = grid;
  g.kernels.assign(grid.cells(), kernel);
  g.field_angle_deg.assign(grid.cells(), 0.0);
  return g;
}

void PsfGrid::validate() const {
  if (grid.rows == 0 || grid.cols == 0) throw ContractError("PSF grid must have at least one cell");
  if (kernels.size() != grid.cells()) throw ContractError("PSF grid kernel count does not match grid extents");
  for (const auto& k : kernels) {
    if (k.extent() != kernels.front().extent() || k.channels() != kernels.front().channels()) {
      throw ContractError("PSF grid kernels differ in extent or channel count");
    }
  }
  if (field_angle_deg.size() != grid.cells()) throw ContractError("field angle map size does not match grid");
}

Tensor PsfGrid::to_tensor() const {
  validate();
  const std::size_t C = channels(), k = kernel_extent();
  std::vector<double> v;
  v.reserve(grid.cells() * C * k * k);
  for (const auto& kernel : kernels) {
    const auto t = kernel.taps().values();
    v.insert(v.end(), t.begin(), t.end());
  }
  return Tensor({grid.rows, grid.cols, C, k, k}, std::move(v));
}

namespace {

// Normalized radial position of a cell: 0 at the grid centre, 1 at the corners.
double radial_position(std::size_t row, std::size_t col, GridSize grid, double* dy_out, double* dx_out) {
  const double cy = 0.5 * static_cast<double>(grid.rows - 1), cx = 0.5 * static_cast<double>(grid.cols - 1);
  const double dy = cy > 0 ? (static_cast<double>(row) - cy) / cy : 0.0;
  const double dx = cx > 0 ? (static_cast<double>(col) - cx) / cx : 0.0;
  if (dy_out) *dy_out = dy;
  if (dx_out) *dx_out = dx;
  return std::sqrt(dy * dy + dx * dx) / std::numbers::sqrt2;
}

std::vector<double> default_field_angles(GridSize grid, double max_angle) {
  std::vector<double> a(grid.cells());
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t c = 0; c < grid.cols; ++c) a[r * grid.cols + c] = max_angle * radial_position(r, c, grid, nullptr, nullptr);
  return a;
}

// Area-weighted coverage of a disc of radius `radius` centred on the middle tap.
std::vector<double> disc_plane(std::size_t k, double radius) {
  std::vector<double> p(k * k, 0.0);
  const double r0 = static_cast<double>(k / 2);
  constexpr int kSub = 8;
  double total = 0.0;
  if (radius > 0) {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        int inside = 0;
        for (int a = 0; a < kSub; ++a)
          for (int b = 0; b < kSub; ++b) {
            const double y = static_cast<double>(i) - r0 - 0.5 + (a + 0.5) / kSub;
            const double x = static_cast<double>(j) - r0 - 0.5 + (b + 0.5) / kSub;
            if (y * y + x * x <= radius * radius) ++inside;
          }
        p[i * k + j] = inside;
        total += inside;
      }
  }
  if (total == 0.0) {
    std::fill(p.begin(), p.end(), 0.0);
    p[(k / 2) * k + k / 2] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

// One-sided line of length `length` pointing along `angle`, bilinear splatted.
std::vector<double> smear_plane(std::size_t k, double length, double angle) {
  std::vector<double> p(k * k, 0.0);
  const double r0 = static_cast<double>(k / 2);
  if (length <= 0) {
    p[(k / 2) * k + k / 2] = 1.0;
    return p;
  }
  const int samples = std::max(2, static_cast<int>(std::ceil(length * 8.0)));
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double t = length * s / (samples - 1);
    const double y = r0 + t * std::sin(angle), x = r0 + t * std::cos(angle);
    const double fy = std::floor(y), fx = std::floor(x);
    const double wy = y - fy, wx = x - fx;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const double iy = fy + a, ix = fx + b;
        if (iy < 0 || ix < 0 || iy >= static_cast<double>(k) || ix >= static_cast<double>(k)) continue;
        const double w = (a ? wy : 1 - wy) * (b ? wx : 1 - wx);
        p[static_cast<std::size_t>(iy) * k + static_cast<std::size_t>(ix)] += w;
        total += w;
      }
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace

PsfGrid synth_psf_grid(std::uint64_t seed, GridSize grid, std::size_t k, double severity,
                       const PsfSynthesisOptions& options) {
  if (grid.rows == 0 || grid.cols == 0) throw ContractError("grid extents must be >= 1");
  if (k % 2 == 0) throw ContractError("kernel extent must be odd, got " + std::to_string(k));
  if (!(severity >= 0.0)) throw ContractError("severity must be >= 0");
  const std::size_t C = options.channels;

  // Defocus radius (pixels) per channel: base + slope * field position. The
  // green channel is the design wavelength and stays sharpest.
  static constexpr double kBase[3] = {1.2, 0.4, 0.8};
  static constexpr double kSlope[3] = {2.4, 1.6, 2.0};
  constexpr double kSmearLength = 5.0;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::uniform_real_distribution<double> tilt(-0.08, 0.08);

  PsfGrid out;
  out.grid = grid;
  out.severity = severity;
  out.seed = seed;
  out.field_angle_deg = default_field_angles(grid, options.max_field_angle_deg);
  out.kernels.reserve(grid.cells());
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t c = 0; c < grid.cols; ++c) {
      double dy = 0, dx = 0;
      const double rho = radial_position(r, c, grid, &dy, &dx);
      const double smear_len = severity * kSmearLength * rho * jitter(rng);
      const double angle = std::atan2(dy, dx) + tilt(rng);
      const auto smear = smear_plane(k, smear_len, angle);
      std::vector<double> taps(C * k * k);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t band = std::min<std::size_t>(ch, 2);
        const double radius = severity * (kBase[band] + kSlope[band] * rho) * jitter(rng);
        const auto disc = disc_plane(k, radius);
        double total = 0.0;
        for (std::size_t i = 0; i < k * k; ++i) {
          taps[ch * k * k + i] = 0.5 * disc[i] + 0.5 * smear[i];
          total += taps[ch * k * k + i];
        }
        for (std::size_t i = 0; i < k * k; ++i) taps[ch * k * k + i] /= total;
      }
      out.kernels.emplace_back(Tensor({C, k, k}, std::move(taps)));
    }
  return out;
}

PsfKernel gaussian_kernel(std::size_t channels, std::size_t extent, double sigma) {
  if (extent % 2 == 0) throw ContractError("PSF extent must be odd");
  const double r = static_cast<double>(extent / 2);
  std::vector<double> plane(extent * extent);
  double total = 0.0;
  for (std::size_t i = 0; i < extent; ++i)
    for (std::size_t j = 0; j < extent; ++j) {
      const double dy = static_cast<double>(i) - r, dx = static_cast<double>(j) - r;
      plane[i * extent + j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      total += plane[i * extent + j];
    }
  std::vector<double> v;
  v.reserve(channels * plane.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (double p : plane) v.push_back(p / total);
  return PsfKernel(Tensor({channels, extent, extent}, std::move(v)));
}

std::filesystem::path psf_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

void save_psf_grid(const std::filesystem::path& path, const PsfGrid& grid) {
  numerics::save_tensor(path, grid.to_tensor());
  nlohmann::ordered_json j;
  j["grid"] = {grid.grid.rows, grid.grid.cols};
  j["kernel_extent"] = grid.kernel_extent();
  j["severity"] = grid.severity;
  j["seed"] = grid.seed;
  std::vector<std::vector<double>> angles(grid.grid.rows);
  for (std::size_t r = 0; r < grid.grid.rows; ++r)
    angles[r].assign(grid.field_angle_deg.begin() + static_cast<std::ptrdiff_t>(r * grid.grid.cols),
                     grid.field_angle_deg.begin() + static_cast<std::ptrdiff_t>((r + 1) * grid.grid.cols));
  j["field_angle_map"] = angles;
  std::ofstream out(psf_sidecar_path(path), std::ios::trunc);
  if (!out) throw FormatError("cannot write PSF sidecar for " + path.string());
  out << j.dump(2) << '\n';
}

PsfGrid load_psf_grid(const std::filesystem::path& path) {
  const Tensor t = numerics::load_tensor(path);
  const auto& s = t.shape();
  PsfGrid grid;
  Shape kernel_shape;
  if (s.size() == 3) {
    grid.grid = {1, 1};
    kernel_shape = s;
  } else if (s.size() == 5) {
    grid.grid = {s[0], s[1]};
    kernel_shape = {s[2], s[3], s[4]};
  } else {
    throw FormatError("PSF file must hold [C,k,k] or [gh,gw,C,k,k], got " + numerics::shape_str(s));
  }
  const std::size_t per = numerics::shape_numel(kernel_shape);
  const Tensor f64 = t.to(DType::F64);
  const auto v = f64.values();
  for (std::size_t cell = 0; cell < grid.grid.cells(); ++cell) {
    std::vector<double> taps(v.begin() + static_cast<std::ptrdiff_t>(cell * per),
                             v.begin() + static_cast<std::ptrdiff_t>((cell + 1) * per));
    grid.kernels.emplace_back(Tensor(kernel_shape, std::move(taps)));
  }
  grid.field_angle_deg = default_field_angles(grid.grid, PsfSynthesisOptions{}.max_field_angle_deg);
  const auto sidecar = psf_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    const auto j = nlohmann::json::parse(in);
    const auto g = j.at("grid").get<std::vector<std::size_t>>();
    if (g.size() != 2 || g[0] != grid.grid.rows || g[1] != grid.grid.cols) {
      throw FormatError("PSF sidecar grid does not match tensor extents");
    }
    grid.severity = j.value("severity", 0.0);
    grid.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("field_angle_map")) {
      grid.field_angle_deg.clear();
      for (const auto& row : j["field_angle_map"])
        for (const auto& a : row) grid.field_angle_deg.push_back(a.get<double>());
    }
  }
  grid.validate();
  return grid;
}

}  // namespace metalens::optics
