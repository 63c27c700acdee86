#pragma once

#include <string>
#include <utility>
#include <vector>

#include "enclab/config.hpp"
#include "enclab/tensor.hpp"

namespace enclab {

// Binary container: magic "NBKT", u32 version, a canonical key=value text
// block, then per-tensor records of (name length, name, rank, extents, raw
// little-endian float32 data). Round-trips bit-exactly.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;  // ordered key=value
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set(const std::string& key, const std::string& value);
  const std::string* find(const std::string& key) const;
  const std::string& require(const std::string& key) const;
  const Tensor* find_tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Canonical textual form of a model configuration, stable key order.
std::vector<std::pair<std::string, std::string>> model_config_to_kv(
    const ModelConfig& cfg);
ModelConfig model_config_from_kv(
    const std::vector<std::pair<std::string, std::string>>& kv);

}  // namespace enclab
