#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "metalens/numerics/tensor.hpp"

namespace metalens::numerics {

// MLTN container, all integers little-endian:
//   "MLTN" | u16 version | u8 dtype | u8 rank | u64 extents[rank] | payload
// Payload is f32, f64, or (f64 re, f64 im) pairs per element.
inline constexpr char kTensorMagic[4] = {'M', 'L', 'T', 'N'};
inline constexpr std::uint16_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

/// Encoded container as a byte string (used by the checkpoint archive).
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace metalens::numerics
