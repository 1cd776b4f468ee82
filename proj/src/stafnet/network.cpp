#include "metalens/stafnet/network.hpp"

#include <array>
#include <cstdio>

#include "metalens/errors.hpp"
#include "metalens/json_util.hpp"

namespace metalens::stafnet {

using numerics::ConvMode;
using numerics::seed_for;
using numerics::Shape;
using numerics::uniform_init;

void NetworkConfig::validate() const {
  if (levels < 1 || levels > 8) throw ContractError("network levels must be in [1, 8]");
  if (base_dim < 1) throw ContractError("base_dim must be >= 1");
  if (levels > 1 && base_dim % 2 != 0) throw ContractError("base_dim must be even when downsampling");
  if (blocks_per_level.size() != levels) throw ContractError("blocks_per_level needs one entry per level");
  if (heads_per_level.size() != levels) throw ContractError("heads_per_level needs one entry per level");
  for (std::size_t l = 0; l < levels; ++l) {
    if (heads_per_level[l] == 0 || dim_at(l) % heads_per_level[l] != 0) {
      throw ContractError("level " + std::to_string(l) + " dim is not divisible by its head count");
    }
  }
  mafg.validate();
  window.validate();
  if (cross_heads == 0 || feature_dim % cross_heads != 0) throw ContractError("feature_dim must divide by cross_heads");
  if (!(ffn_expansion > 0.0)) throw ContractError("ffn_expansion must be > 0");
  if (channels < 1) throw ContractError("channels must be >= 1");
}

numerics::PoolSpec NetworkConfig::pool() const {
  return pool_window == 0 ? numerics::PoolSpec::spatial() : numerics::PoolSpec::box(pool_window);
}

nlohmann::ordered_json to_json(const NetworkConfig& c) {
  nlohmann::ordered_json j;
  j["levels"] = c.levels;
  j["base_dim"] = c.base_dim;
  j["blocks_per_level"] = c.blocks_per_level;
  j["heads_per_level"] = c.heads_per_level;
  j["mafg"] = wiener::to_json(c.mafg);
  j["window"] = {{"window", c.window.window}, {"overlap_ratio", c.window.overlap_ratio}};
  j["pool_window"] = c.pool_window;
  j["feature_dim"] = c.feature_dim;
  j["cross_heads"] = c.cross_heads;
  j["ffn_expansion"] = c.ffn_expansion;
  j["channels"] = c.channels;
  return j;
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"levels", "base_dim", "blocks_per_level", "heads_per_level", "mafg", "window", "pool_window",
                      "feature_dim", "cross_heads", "ffn_expansion", "channels"},
                     "network config");
  NetworkConfig c;
  read_optional(j, "levels", c.levels);
  read_optional(j, "base_dim", c.base_dim);
  read_optional(j, "blocks_per_level", c.blocks_per_level);
  read_optional(j, "heads_per_level", c.heads_per_level);
  if (j.contains("mafg")) c.mafg = wiener::filter_bank_from_json(j.at("mafg"));
  if (j.contains("window")) {
    const auto& w = j.at("window");
    require_known_keys(w, {"window", "overlap_ratio"}, "window spec");
    read_optional(w, "window", c.window.window);
    read_optional(w, "overlap_ratio", c.window.overlap_ratio);
  }
  read_optional(j, "pool_window", c.pool_window);
  read_optional(j, "feature_dim", c.feature_dim);
  read_optional(j, "cross_heads", c.cross_heads);
  read_optional(j, "ffn_expansion", c.ffn_expansion);
  read_optional(j, "channels", c.channels);
  c.validate();
  return c;
}

std::string config_hash(const NetworkConfig& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

NetworkParams NetworkParams::init(const NetworkConfig& c, std::uint64_t seed) {
  c.validate();
  NetworkParams p;
  p.cross = attention::CrossAttentionParams::init(c.channels, c.feature_dim, c.cross_heads, seed_for(seed, "mafg"));
  p.stem = uniform_init({c.base_dim, c.feature_dim}, c.feature_dim, seed_for(seed, "stem"));
  const auto block = [&](std::size_t level, std::size_t b, Stage stage) {
    const std::string name = (stage == Stage::Encoder ? "enc" : "dec") + std::to_string(level) + ".block" +
                             std::to_string(b);
    return StafBlockParams::init(c.dim_at(level), c.heads_per_level[level], stage, b, c.window, c.pool(),
                                 c.ffn_expansion, seed_for(seed, name));
  };
  for (std::size_t l = 0; l < c.levels; ++l) {
    auto& blocks = p.encoder.emplace_back();
    for (std::size_t b = 0; b < c.blocks_per_level[l]; ++b) blocks.push_back(block(l, b, Stage::Encoder));
  }
  for (std::size_t l = 0; l + 1 < c.levels; ++l) {
    const std::size_t d = c.dim_at(l), dn = c.dim_at(l + 1);
    p.down.push_back(uniform_init({d / 2, d}, d, seed_for(seed, "down" + std::to_string(l))));
    p.up.push_back(uniform_init({2 * dn, dn}, dn, seed_for(seed, "up" + std::to_string(l))));
    p.reduce.push_back(uniform_init({d, 2 * d}, 2 * d, seed_for(seed, "reduce" + std::to_string(l))));
    auto& blocks = p.decoder.emplace_back();
    for (std::size_t b = 0; b < c.blocks_per_level[l]; ++b) blocks.push_back(block(l, b, Stage::Decoder));
  }
  p.out_proj = uniform_init({c.channels, c.base_dim}, c.base_dim, seed_for(seed, "out_proj"));
  return p;
}

numerics::ParamList NetworkParams::named() {
  numerics::ParamList out;
  cross.collect("mafg", out);
  out.push_back({"stem", &stem});
  for (std::size_t l = 0; l < encoder.size(); ++l)
    for (std::size_t b = 0; b < encoder[l].size(); ++b)
      encoder[l][b].collect("enc" + std::to_string(l) + ".block" + std::to_string(b), out);
  for (std::size_t l = 0; l < down.size(); ++l) {
    out.push_back({"down" + std::to_string(l), &down[l]});
    out.push_back({"up" + std::to_string(l), &up[l]});
    out.push_back({"reduce" + std::to_string(l), &reduce[l]});
  }
  for (std::size_t l = 0; l < decoder.size(); ++l)
    for (std::size_t b = 0; b < decoder[l].size(); ++b)
      decoder[l][b].collect("dec" + std::to_string(l) + ".block" + std::to_string(b), out);
  out.push_back({"out_proj", &out_proj});
  return out;
}

void NetworkParams::check(const NetworkConfig& config) {
  NetworkParams ref = init(config, 0);
  const auto mine = named(), want = ref.named();
  if (mine.size() != want.size()) throw ContractError("parameter set does not match the network config");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].name != want[i].name || !mine[i].tensor->defined() ||
        mine[i].tensor->shape() != want[i].tensor->shape()) {
      throw ContractError("parameter " + want[i].name + " does not match the network config");
    }
  }
}

Tensor network_forward(const wiener::DeconvStack& stack, const NetworkConfig& c, const NetworkParams& p) {
  c.validate();
  const Tensor images = stack.as_tensor();
  const std::size_t M = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (C != c.channels) throw ContractError("stack channels do not match the network config");
  if (p.encoder.size() != c.levels || p.decoder.size() + 1 != c.levels) {
    throw ContractError("parameters were built for a different level count");
  }
  const std::size_t mult = c.size_multiple();
  const std::size_t Hp = (H + mult - 1) / mult * mult, Wp = (W + mult - 1) / mult * mult;
  if (Hp / mult < c.window.window || Wp / mult < c.window.window) {
    throw ContractError("image too small: the coarsest level must be at least one attention window");
  }
  Tensor padded = images;
  if (Hp != H || Wp != W) {
    const bool reflect = Hp - H < H && Wp - W < W;
    padded = numerics::pad2d(images, 0, Hp - H, 0, Wp - W,
                             reflect ? numerics::PadMode::Reflect : numerics::PadMode::Replicate);
  }

  const Tensor feat = attention::cross_attention_mafg(numerics::reshape(padded, {1, M, C, Hp, Wp}),
                                                      stack.median_index, p.cross, c.window);
  Tensor h = numerics::conv2d(feat, p.stem, ConvMode::Pointwise1x1);
  std::vector<Tensor> skips;
  for (std::size_t l = 0; l < c.levels; ++l) {
    for (const auto& block : p.encoder[l]) h = staf_block_forward(h, block);
    if (l + 1 < c.levels) {
      skips.push_back(h);
      h = numerics::pixel_unshuffle(numerics::conv2d(h, p.down[l], ConvMode::Pointwise1x1), 2);
    }
  }
  for (std::size_t l = c.levels - 1; l-- > 0;) {
    h = numerics::pixel_shuffle(numerics::conv2d(h, p.up[l], ConvMode::Pointwise1x1), 2);
    const std::array parts{h, skips[l]};
    h = numerics::conv2d(numerics::concat(parts, 1), p.reduce[l], ConvMode::Pointwise1x1);
    for (const auto& block : p.decoder[l]) h = staf_block_forward(h, block);
  }
  Tensor residual = numerics::conv2d(h, p.out_proj, ConvMode::Pointwise1x1);
  if (Hp != H || Wp != W) residual = numerics::crop2d(residual, 0, 0, H, W);
  return numerics::add(stack.median(), numerics::reshape(residual, {C, H, W}));
}

Tensor network_forward(const Tensor& observed, const optics::PsfGrid& psf, const NetworkConfig& config,
                       const NetworkParams& params) {
  return network_forward(wiener::deconvolve_for(observed, psf, config.mafg), config, params);
}

Tensor network_forward(const Tensor& observed, const optics::PsfKernel& psf, const NetworkConfig& config,
                       const NetworkParams& params) {
  return network_forward(wiener::deconvolve_bank(observed, psf, config.mafg), config, params);
}

}  // namespace metalens::stafnet
