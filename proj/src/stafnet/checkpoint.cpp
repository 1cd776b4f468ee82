#include "metalens/stafnet/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "metalens/errors.hpp"
#include "metalens/numerics/tensor_io.hpp"

namespace metalens::stafnet {

namespace {

template <class T>
void put_le(std::ostream& os, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("truncated checkpoint header");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

Checkpoint Checkpoint::fresh(const NetworkConfig& config, std::uint64_t seed) {
  Checkpoint c;
  c.config = config;
  c.params = NetworkParams::init(config, seed);
  c.seed = seed;
  return c;
}

void save_checkpoint(const std::filesystem::path& path, Checkpoint& ck) {
  nlohmann::ordered_json manifest;
  manifest["config"] = to_json(ck.config);
  manifest["config_hash"] = ck.config_hash();
  manifest["step"] = ck.step;
  manifest["seed"] = ck.seed;
  manifest["rng_state"] = ck.rng_state;
  std::string blobs;
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& [name, t] : ck.params.named()) {
    const std::string blob = numerics::encode_tensor(t->to(numerics::DType::F64));
    tensors.push_back({{"name", name},
                       {"offset", blobs.size()},
                       {"length", blob.size()},
                       {"shape", t->shape()},
                       {"dtype", numerics::dtype_name(numerics::DType::F64)}});
    blobs += blob;
  }
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out << text << blobs;
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError(path.string() + " is not a checkpoint archive");
  }
  const auto version = get_le<std::uint16_t>(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get_le<std::uint64_t>(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint manifest");
  std::string blobs((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  Checkpoint ck;
  ck.config = network_config_from_json(manifest.at("config"));
  if (manifest.at("config_hash").get<std::string>() != ck.config_hash()) {
    throw FormatError("checkpoint config hash does not match its stored config");
  }
  ck.step = manifest.at("step").get<std::uint64_t>();
  ck.seed = manifest.at("seed").get<std::uint64_t>();
  ck.rng_state = manifest.at("rng_state").get<std::string>();
  ck.params = NetworkParams::init(ck.config, ck.seed);

  auto named = ck.params.named();
  const auto& entries = manifest.at("tensors");
  if (entries.size() != named.size()) throw ContractError("checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != named[i].name) {
      throw ContractError("checkpoint parameter " + e.at("name").get<std::string>() + " where " + named[i].name +
                          " was expected");
    }
    const auto off = e.at("offset").get<std::size_t>(), n = e.at("length").get<std::size_t>();
    if (off + n > blobs.size()) throw FormatError("checkpoint blob out of range for " + named[i].name);
    Tensor t = numerics::decode_tensor(blobs.substr(off, n));
    if (t.shape() != named[i].tensor->shape()) throw ContractError("shape mismatch for " + named[i].name);
    t.set_requires_grad(true);
    *named[i].tensor = t;
  }
  return ck;
}

void require_config(const Checkpoint& ck, const NetworkConfig& expected) {
  const std::string have = ck.config_hash(), want = config_hash(expected);
  if (have != want) {
    throw ContractError("checkpoint config hash " + have + " does not match requested config hash " + want);
  }
}

void zero_output_projection(NetworkParams& params) {
  for (auto& v : params.out_proj.mutable_values()) v = 0.0;
}

}  // namespace metalens::stafnet
