#include "metalens/stafnet/staf_block.hpp"

#include <array>

#include "metalens/errors.hpp"

namespace metalens::stafnet {

using numerics::ConvMode;
using numerics::PoolSpec;
using numerics::seed_for;
using numerics::uniform_init;

FusionParams FusionParams::init(std::size_t dim, std::uint64_t seed) {
  return {uniform_init({2 * dim, 2 * dim}, 2 * dim, seed_for(seed, "w1")),
          uniform_init({dim, 2 * dim}, 2 * dim, seed_for(seed, "w2"))};
}

void FusionParams::collect(const std::string& prefix, numerics::ParamList& out) {
  out.push_back({prefix + ".w1", &w1});
  out.push_back({prefix + ".w2", &w2});
}

FfnParams FfnParams::init(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  return {uniform_init({2 * hidden, dim}, dim, seed_for(seed, "w_in")),
          uniform_init({2 * hidden, 3, 3}, 9, seed_for(seed, "w_dw")),
          uniform_init({dim, hidden}, hidden, seed_for(seed, "w_out"))};
}

void FfnParams::collect(const std::string& prefix, numerics::ParamList& out) {
  out.push_back({prefix + ".w_in", &w_in});
  out.push_back({prefix + ".w_dw", &w_dw});
  out.push_back({prefix + ".w_out", &w_out});
}

StafBlockParams StafBlockParams::init(std::size_t dim, std::size_t heads, Stage stage, std::size_t block_index,
                                      const attention::WindowSpec& window, PoolSpec pool, double ffn_expansion,
                                      std::uint64_t seed) {
  window.validate();
  const auto hidden = static_cast<std::size_t>(static_cast<double>(dim) * ffn_expansion);
  if (hidden == 0) throw ContractError("feed-forward hidden width must be >= 1");
  StafBlockParams p;
  p.dim = dim;
  p.stage = stage;
  p.block_index = block_index;
  p.sa = attention::AttentionParams::init(dim, heads, seed_for(seed, "sa"));
  p.window = window;
  p.ta = attention::AttentionParams::init(dim, heads, seed_for(seed, "ta"));
  p.fusion = FusionParams::init(dim, seed_for(seed, "fuse"));
  p.ffn = FfnParams::init(dim, hidden, seed_for(seed, "ffn"));
  p.norm1 = numerics::constant_param({dim}, 1.0);
  p.norm2 = numerics::constant_param({dim}, 1.0);
  p.pool = pool;
  return p;
}

void StafBlockParams::collect(const std::string& prefix, numerics::ParamList& out) {
  sa.collect(prefix + ".sa", out, false);
  ta.collect(prefix + ".ta", out);
  fusion.collect(prefix + ".fuse", out);
  ffn.collect(prefix + ".ffn", out);
  out.push_back({prefix + ".norm1", &norm1});
  out.push_back({prefix + ".norm2", &norm2});
}

FuseResult staf_fuse(const Tensor& f_sa, const Tensor& f_ta, const FusionParams& params, Stage stage) {
  if (f_sa.rank() != 4 || f_sa.shape() != f_ta.shape()) {
    throw ShapeError("staf_fuse: " + numerics::shape_str(f_sa.shape()) + " vs " + numerics::shape_str(f_ta.shape()));
  }
  const std::array parts{f_sa, f_ta};
  const Tensor f = numerics::concat(parts, 1);
  const Tensor a = numerics::conv2d(numerics::gelu(numerics::conv2d(f, params.w1, ConvMode::Pointwise1x1)),
                                    params.w2, ConvMode::Pointwise1x1);
  const PoolSpec pool = stage == Stage::Encoder ? PoolSpec::spatial() : PoolSpec::channel();
  const Tensor gate = numerics::sigmoid(numerics::avg_pool(a, pool));
  const Tensor out = numerics::add(numerics::mul(f_sa, gate), numerics::mul(f_ta, numerics::one_minus(gate)));
  return {out, gate, a};
}

Tensor feed_forward(const Tensor& x, const FfnParams& params) {
  const std::size_t h = params.hidden();
  const Tensor t = numerics::conv2d(numerics::conv2d(x, params.w_in, ConvMode::Pointwise1x1), params.w_dw,
                                    ConvMode::Depthwise3x3);
  const Tensor g = numerics::mul(numerics::gelu(numerics::slice(t, 1, 0, h)), numerics::slice(t, 1, h, h));
  return numerics::conv2d(g, params.w_out, ConvMode::Pointwise1x1);
}

Tensor staf_block_forward(const Tensor& x, const StafBlockParams& params) {
  if (x.rank() != 4 || x.dim(1) != params.dim) {
    throw ShapeError("STAF block of dim " + std::to_string(params.dim) + " got " + numerics::shape_str(x.shape()));
  }
  const Tensor n = numerics::layer_norm_channels(x, params.norm1);
  std::optional<Tensor> q;
  if (params.enhances_query()) q = attention::enhance_query(n, params.block_index, params.pool);
  const Tensor f_sa = attention::spatial_attention(n, params.sa, params.window, q);
  const Tensor f_ta = attention::transposed_attention(n, params.ta, q);
  const Tensor y = numerics::add(x, staf_fuse(f_sa, f_ta, params.fusion, params.stage).output);
  return numerics::add(y, feed_forward(numerics::layer_norm_channels(y, params.norm2), params.ffn));
}

}  // namespace metalens::stafnet
