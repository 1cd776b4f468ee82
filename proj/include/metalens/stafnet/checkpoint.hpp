#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "metalens/stafnet/network.hpp"

namespace metalens::stafnet {

inline constexpr char kCheckpointMagic[4] = {'M', 'L', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string rng_state;  // textual std::mt19937_64 state of the pair sampler

  static Checkpoint fresh(const NetworkConfig& config, std::uint64_t seed);
  std::string config_hash() const { return stafnet::config_hash(config); }
};

/// Archive: "MLCK" | u16 version | u64 manifest length | JSON manifest |
/// one MLTN blob per parameter. The manifest maps each parameter name to
/// {offset, length, shape, dtype} (offsets relative to the first blob) and
/// carries the network config, its hash, step, seed and rng state.
/// Parameters are stored in double precision, so a round trip is bit-exact.
void save_checkpoint(const std::filesystem::path& path, Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Raises ContractError naming both hashes when the checkpoint was trained
/// under a different config.
void require_config(const Checkpoint& checkpoint, const NetworkConfig& expected);

/// Zeroes the final output projection (the residual branch).
void zero_output_projection(NetworkParams& params);

}  // namespace metalens::stafnet
