#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "copnet/model.hpp"

namespace copnet {

// Binary container: "COPV" magic, a version byte, a little-endian u64 length
// prefix, a JSON manifest (names, shapes, byte offsets, config, counters),
// then the tensor payload as raw little-endian f64 in manifest order.
// Round-trips bit for bit.
struct Checkpoint {
  std::string model_kind;  // "cop" | "monolith" | "broken"
  nlohmann::json config;   // resolved training config
  std::uint64_t seed = 0;
  int completed_epochs = 0;
  std::int64_t adam_step = 0;
  std::vector<NamedParam> tensors;
};

inline constexpr char kCheckpointMagic[4] = {'C', 'O', 'P', 'V'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a hash of a canonical JSON dump, as fixed-width hex.
std::string config_fingerprint(const nlohmann::json& config);

}  // namespace copnet
