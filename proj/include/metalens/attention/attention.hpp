#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "metalens/numerics/init.hpp"
#include "metalens/numerics/ops.hpp"
#include "metalens/numerics/tensor.hpp"

namespace metalens::wiener {
struct DeconvStack;
}

namespace metalens::attention {

using numerics::Tensor;

/// Query windows of side `window` tile the (padded) feature map without
/// overlap; each attends to a centred key/value window of side
/// floor(window * (1 + overlap_ratio)), replicate-padded at the borders.
struct WindowSpec {
  std::size_t window = 4;
  double overlap_ratio = 0.5;

  void validate() const;
  std::size_t kv_window() const;
  bool operator==(const WindowSpec&) const = default;
};

/// Q, K, V and output projections (1x1, [dim, dim]) plus a per-head
/// temperature used by the channel attention.
struct AttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  Tensor wq, wk, wv, wo;
  Tensor temperature;  // [heads], initialised to 1

  static AttentionParams init(std::size_t dim, std::size_t heads, std::uint64_t seed);
  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
  /// The temperature only drives channel attention; windowed uses leave it out.
  void collect(const std::string& prefix, numerics::ParamList& out, bool with_temperature = true);
};

/// Windowed pixel-token self-attention with softmax(QK^T / sqrt(d_head)).
/// Q is projected from `q_override` when given, otherwise from `x`.
/// Extents that the window does not divide are replicate-padded on the
/// bottom/right and cropped back.
Tensor spatial_attention(const Tensor& x, const AttentionParams& p, const WindowSpec& w,
                         const std::optional<Tensor>& q_override = std::nullopt);

/// Channel-token attention: per head a (C/heads) x (C/heads) map from
/// L2-normalised Q and K (normalised across pixels) scaled by the head's
/// temperature.
Tensor transposed_attention(const Tensor& x, const AttentionParams& p,
                            const std::optional<Tensor>& q_override = std::nullopt);

/// Shared 1x1 embedding of each bank image plus attention projections.
struct CrossAttentionParams {
  Tensor embed;  // [feature_dim, in_channels]
  AttentionParams attn;

  static CrossAttentionParams init(std::size_t in_channels, std::size_t feature_dim, std::size_t heads,
                                   std::uint64_t seed);
  void validate() const;
  void collect(const std::string& prefix, numerics::ParamList& out);
};

/// stack [B,M,C,H,W]: every image is embedded to feature_dim channels;
/// queries come from image `median_index`, keys and values from all M
/// images jointly (M * kv_window^2 tokens per query window).
/// Returns [B,feature_dim,H,W].
Tensor cross_attention_mafg(const Tensor& stack, std::size_t median_index, const CrossAttentionParams& p,
                            const WindowSpec& w);
Tensor cross_attention_mafg(const wiener::DeconvStack& stack, const CrossAttentionParams& p, const WindowSpec& w);

/// Decoder query enhancement: identity for even `block_index`, otherwise
/// the high-pass residual q - avg_pool(q). `pool` is a box window or the
/// global spatial mean.
Tensor enhance_query(const Tensor& q, std::size_t block_index, numerics::PoolSpec pool);

}  // namespace metalens::attention
