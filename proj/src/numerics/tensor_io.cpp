#include "metalens/numerics/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metalens/errors.hpp"

namespace metalens::numerics {

static_assert(std::endian::native == std::endian::little, "MLTN I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("MLTN: truncated stream");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  put<std::uint16_t>(out, kTensorFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  if (t.rank() > 255) throw FormatError("MLTN: rank exceeds 255");
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put<std::uint64_t>(out, e);
  const auto& raw = t.node()->values;
  if (t.dtype() == DType::F32) {
    std::vector<float> f(raw.begin(), raw.end());
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(double)));
  }
  if (!out) throw FormatError("MLTN: write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("MLTN: bad magic");
  const auto version = get<std::uint16_t>(in);
  if (version != kTensorFormatVersion) throw FormatError("MLTN: unsupported version " + std::to_string(version));
  const auto code = get<std::uint8_t>(in);
  if (code > static_cast<std::uint8_t>(DType::C128)) throw FormatError("MLTN: unknown dtype code");
  const auto dtype = static_cast<DType>(code);
  const auto rank = get<std::uint8_t>(in);
  Shape shape(rank);
  for (auto& e : shape) e = get<std::uint64_t>(in);
  const std::size_t count = shape_numel(shape) * (dtype == DType::C128 ? 2 : 1);
  std::vector<double> values(count);
  if (dtype == DType::F32) {
    std::vector<float> f(count);
    if (!in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * sizeof(float)))) {
      throw FormatError("MLTN: truncated payload");
    }
    std::copy(f.begin(), f.end(), values.begin());
  } else if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw FormatError("MLTN: truncated payload");
  }
  return Tensor(std::move(shape), std::move(values), dtype);
}

std::string encode_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

Tensor decode_tensor(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_tensor(is);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace metalens::numerics
