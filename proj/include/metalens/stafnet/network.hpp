#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "metalens/attention/attention.hpp"
#include "metalens/optics/psf.hpp"
#include "metalens/stafnet/staf_block.hpp"
#include "metalens/wiener/wiener.hpp"

namespace metalens::stafnet {

/// Encoder-decoder layout. Level l runs at base_dim * 2^l channels and
/// 1/2^l resolution; the last level is the latent stage.
struct NetworkConfig {
  std::size_t levels = 4;
  std::size_t base_dim = 16;
  std::vector<std::size_t> blocks_per_level{1, 1, 1, 1};
  std::vector<std::size_t> heads_per_level{1, 2, 4, 8};
  wiener::FilterBankConfig mafg;
  attention::WindowSpec window;
  /// Box window for decoder query enhancement; 0 selects the global mean.
  std::size_t pool_window = 3;
  std::size_t feature_dim = 32;
  std::size_t cross_heads = 2;
  double ffn_expansion = 2.66;
  std::size_t channels = 3;

  void validate() const;
  std::size_t dim_at(std::size_t level) const { return base_dim << level; }
  /// Spatial extents must be multiples of this (inputs are reflect-padded).
  std::size_t size_multiple() const { return std::size_t{1} << (levels - 1); }
  numerics::PoolSpec pool() const;

  bool operator==(const NetworkConfig&) const = default;
};

nlohmann::ordered_json to_json(const NetworkConfig& config);
/// Strict parse; unknown keys raise ContractError, missing keys keep defaults.
NetworkConfig network_config_from_json(const nlohmann::json& j);
/// FNV-1a (hex) over the canonical JSON form.
std::string config_hash(const NetworkConfig& config);

struct NetworkParams {
  attention::CrossAttentionParams cross;
  Tensor stem;                                  // [base_dim, feature_dim]
  std::vector<std::vector<StafBlockParams>> encoder;  // per level
  std::vector<Tensor> down;                     // level l -> l+1: [D_l/2, D_l] then unshuffle
  std::vector<Tensor> up;                       // level l+1 -> l: [2 D_{l+1}, D_{l+1}] then shuffle
  std::vector<Tensor> reduce;                   // [D_l, 2 D_l] after the skip concat
  std::vector<std::vector<StafBlockParams>> decoder;  // per level 0 .. levels-2
  Tensor out_proj;                              // [channels, base_dim]

  static NetworkParams init(const NetworkConfig& config, std::uint64_t seed);
  /// Every learnable tensor with its hierarchical name, in a fixed order.
  numerics::ParamList named();
  /// Checks parameter shapes against `config`; ContractError on mismatch.
  void check(const NetworkConfig& config);
};

/// Restoration from a precomputed bank `stack` ([M,C,H,W] images): returns
/// the median image plus the learned residual, [C,H,W].
Tensor network_forward(const wiener::DeconvStack& stack, const NetworkConfig& config, const NetworkParams& params);

/// Full pipeline from an observation: deconvolution bank, then the network.
Tensor network_forward(const Tensor& observed, const optics::PsfGrid& psf, const NetworkConfig& config,
                       const NetworkParams& params);
Tensor network_forward(const Tensor& observed, const optics::PsfKernel& psf, const NetworkConfig& config,
                       const NetworkParams& params);

}  // namespace metalens::stafnet
