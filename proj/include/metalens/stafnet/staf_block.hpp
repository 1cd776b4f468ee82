#pragma once

#include <cstdint>
#include <string>

#include "metalens/attention/attention.hpp"

namespace metalens::stafnet {

using numerics::Tensor;

enum class Stage { Encoder, Decoder };

/// Two 1x1 convolutions 2C -> 2C -> C with GELU between, no bias.
struct FusionParams {
  Tensor w1;  // [2C, 2C]
  Tensor w2;  // [C, 2C]

  static FusionParams init(std::size_t dim, std::uint64_t seed);
  void collect(const std::string& prefix, numerics::ParamList& out);
};

/// Gated depthwise-conv feed-forward: 1x1 C -> 2h, depthwise 3x3,
/// gelu(first half) * second half, 1x1 h -> C.
struct FfnParams {
  Tensor w_in;   // [2h, C]
  Tensor w_dw;   // [2h, 3, 3]
  Tensor w_out;  // [C, h]

  static FfnParams init(std::size_t dim, std::size_t hidden, std::uint64_t seed);
  std::size_t hidden() const { return w_out.dim(1); }
  void collect(const std::string& prefix, numerics::ParamList& out);
};

struct StafBlockParams {
  std::size_t dim = 0;
  Stage stage = Stage::Encoder;
  std::size_t block_index = 0;
  attention::AttentionParams sa;
  attention::WindowSpec window;
  attention::AttentionParams ta;
  FusionParams fusion;
  FfnParams ffn;
  Tensor norm1;  // [C]
  Tensor norm2;  // [C]
  numerics::PoolSpec pool = numerics::PoolSpec::box(3);

  static StafBlockParams init(std::size_t dim, std::size_t heads, Stage stage, std::size_t block_index,
                              const attention::WindowSpec& window, numerics::PoolSpec pool, double ffn_expansion,
                              std::uint64_t seed);
  /// Decoder blocks with odd index replace their queries by the enhanced ones.
  bool enhances_query() const { return stage == Stage::Decoder && block_index % 2 == 1; }
  void collect(const std::string& prefix, numerics::ParamList& out);
};

struct FuseResult {
  Tensor output;  // [B,C,H,W]
  Tensor gate;    // sigmoid-pooled mixing weight: [B,C,1,1] encoder, [B,1,H,W] decoder
  Tensor mix;     // pre-pooling fusion map A, [B,C,H,W]
};

/// out = F_SA * A_w + F_TA * (1 - A_w), with A_w pooled from the fused map.
FuseResult staf_fuse(const Tensor& f_sa, const Tensor& f_ta, const FusionParams& params, Stage stage);

Tensor feed_forward(const Tensor& x, const FfnParams& params);

/// y = x + fuse(SA(LN x), TA(LN x)); returns y + FFN(LN y).
Tensor staf_block_forward(const Tensor& x, const StafBlockParams& params);

}  // namespace metalens::stafnet
