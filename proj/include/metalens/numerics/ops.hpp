#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "metalens/numerics/tensor.hpp"

namespace metalens::numerics {

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops broadcast over trailing dimensions
// (numpy rules); a mismatch that cannot broadcast raises ShapeError.

enum class Elementwise { Add, Sub, Mul, Div, Scale, Sigmoid, Gelu };

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b);
Tensor elementwise(Elementwise op, const Tensor& a, double b);

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double factor);
/// 1 - a, used by gate mixing.
Tensor one_minus(const Tensor& a);

Tensor sigmoid(const Tensor& x);
/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions.

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the listed axes, keeping them as extent-1 dimensions.
Tensor mean_over(const Tensor& x, std::vector<std::size_t> axes);

// ---------------------------------------------------------------------------
// Layout.

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose_last2(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

using IndexMap = std::shared_ptr<const std::vector<std::uint32_t>>;

/// out[i] = x[index[i]]; the backward pass scatter-adds.
Tensor gather(const Tensor& x, IndexMap index, Shape out_shape);

/// Replicate or reflect padding of the two trailing (spatial) axes.
enum class PadMode { Replicate, Reflect };
Tensor pad2d(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right, PadMode mode);
Tensor crop2d(const Tensor& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

/// [B,C,H,W] -> [B,C*r*r,H/r,W/r] and its inverse.
Tensor pixel_unshuffle(const Tensor& x, std::size_t factor);
Tensor pixel_shuffle(const Tensor& x, std::size_t factor);

// ---------------------------------------------------------------------------
// Linear algebra and neural-network primitives.

/// Batched product over the two trailing axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stable softmax (max-subtracted). NaN input raises NumericError.
Tensor softmax(const Tensor& x, std::size_t axis);

enum class ConvMode {
  Pointwise1x1,  // weight [Cout, Cin]: per-pixel channel mix
  Depthwise3x3,  // weight [C, 3, 3]: per-channel 3x3 correlation, replicate padding 1
};
Tensor conv2d(const Tensor& x, const Tensor& weight, ConvMode mode);

struct PoolSpec {
  enum class Kind { Spatial, Channel, Window };
  Kind kind = Kind::Spatial;
  std::size_t window = 3;

  static PoolSpec spatial() { return {Kind::Spatial, 0}; }
  static PoolSpec channel() { return {Kind::Channel, 0}; }
  static PoolSpec box(std::size_t k) { return {Kind::Window, k}; }
};

/// Average pooling on [B,C,H,W]: spatial -> [B,C,1,1], channel -> [B,1,H,W],
/// window(k) -> k x k box filter with replicate padding, same extents.
/// For even k the window covers offsets [-(k-1)/2, k/2].
Tensor avg_pool(const Tensor& x, PoolSpec spec);

/// Per-pixel layer norm over the channel axis of [B,C,H,W]; weight [C], no bias.
Tensor layer_norm_channels(const Tensor& x, const Tensor& weight, double eps = 1e-5);

/// x / max(||x||_2, eps) along the last axis.
Tensor l2_normalize_last(const Tensor& x, double eps = 1e-12);

}  // namespace metalens::numerics
