#include "copnet/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "copnet/common.hpp"
#include "copnet/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace copnet {

using nlohmann::json;

std::string config_fingerprint(const json& config) {
  const std::string dump = config.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json manifest;
  manifest["model_kind"] = ckpt.model_kind;
  manifest["config"] = ckpt.config;
  manifest["rng"] = {{"seed", ckpt.seed}};
  manifest["completed_epochs"] = ckpt.completed_epochs;
  manifest["adam_step"] = ckpt.adam_step;

  json tensor_list = json::array();
  std::uint64_t offset = 0;
  for (const NamedParam& np : ckpt.tensors) {
    tensor_list.push_back({{"name", np.name},
                           {"shape", np.tensor.shape()},
                           {"offset", offset}});
    offset += np.tensor.values().size() * sizeof(double);
  }
  manifest["tensors"] = std::move(tensor_list);
  const std::string mbytes = manifest.dump();

  std::string out;
  out.reserve(4 + 1 + 8 + mbytes.size() + offset);
  out.append(kCheckpointMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  const std::uint64_t mlen = mbytes.size();
  char lenbuf[8];
  std::memcpy(lenbuf, &mlen, 8);
  out.append(lenbuf, 8);
  out += mbytes;
  for (const NamedParam& np : ckpt.tensors) {
    const auto& v = np.tensor.values();
    const std::size_t bytes = v.size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, v.data(), bytes);
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string raw = read_text_file(path);
  if (raw.size() < 13 || std::memcmp(raw.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(path + ": not a checkpoint file (bad magic)");
  const std::uint8_t version = static_cast<std::uint8_t>(raw[4]);
  if (version != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, raw.data() + 5, 8);
  if (13 + mlen > raw.size())
    throw FormatError(path + ": truncated manifest");

  json manifest;
  try {
    manifest = json::parse(raw.substr(13, mlen));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": manifest is not valid JSON: " + e.what());
  }

  Checkpoint ckpt;
  const std::size_t data_start = 13 + mlen;
  try {
    ckpt.model_kind = manifest.at("model_kind").get<std::string>();
    ckpt.config = manifest.at("config");
    ckpt.seed = manifest.at("rng").at("seed").get<std::uint64_t>();
    ckpt.completed_epochs = manifest.at("completed_epochs").get<int>();
    ckpt.adam_step = manifest.at("adam_step").get<std::int64_t>();
    for (const auto& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const Shape shape = t.at("shape").get<Shape>();
      const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
      const std::uint64_t count = static_cast<std::uint64_t>(shape_numel(shape));
      if (data_start + offset + count * sizeof(double) > raw.size())
        throw FormatError(path + ": tensor \"" + name + "\" extends past end of file");
      std::vector<double> values(count);
      std::memcpy(values.data(), raw.data() + data_start + offset,
                  count * sizeof(double));
      ckpt.tensors.push_back({name, Tensor::from(shape, std::move(values))});
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed manifest: " + e.what());
  }
  return ckpt;
}

}  // namespace copnet
