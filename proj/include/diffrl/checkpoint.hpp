#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffrl/types.hpp"

namespace diffrl {

// Versioned binary container: magic, format version, a JSON metadata blob,
// a manifest of named tensors (shape + little-endian float64 data), and a
// trailing FNV-1a checksum over everything before it.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, std::pair<std::vector<std::uint64_t>, Vector>> tensors;

  void add_tensor(const std::string& name, const Vector& flat);
  const Vector& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> checkpoint_serialize(const Checkpoint& ckpt);
Checkpoint checkpoint_parse(const std::vector<std::uint8_t>& bytes);

void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace diffrl
