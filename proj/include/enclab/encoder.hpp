#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enclab/config.hpp"
#include "enclab/packing.hpp"
#include "enclab/tensor.hpp"

namespace enclab {

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool weight_decay;  // false for norm gains and embeddings
};

// Bidirectional encoder: token (and optionally learned absolute position)
// embeddings, a stack of attention + FFN blocks with configurable norm kind,
// norm placement, activation and positional scheme, and an MLM head tied to
// the embedding by default.
class EncoderModel {
 public:
  EncoderModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<ParamEntry>& params() { return params_; }
  const std::vector<ParamEntry>& params() const { return params_; }
  Tensor param(const std::string& name) const;

  // Hidden states, one row per token of the batch: [total_tokens, d_model].
  Tensor forward(const PackedBatch& batch) const;

  // hidden x embedding^T (+ output bias); uses the separate head matrix when
  // untied.
  Tensor mlm_logits(const Tensor& hidden) const;

  int64_t param_count_registry() const;

  EncoderModel clone() const;

  // Replaces parameter values from same-shaped tensors keyed by name.
  void load_param_values(const std::vector<std::pair<std::string, Tensor>>& tensors);

 private:
  EncoderModel() = default;
  Tensor add_param(const std::string& name, Shape shape, bool decay,
                   float init_std, Rng& rng);
  Tensor norm(const Tensor& x, const Tensor& gain) const;

  ModelConfig cfg_;
  std::vector<ParamEntry> params_;
};

// Exact analytic parameter total for a configuration; the registry walk in
// EncoderModel must agree.
int64_t param_count(const ModelConfig& cfg);

}  // namespace enclab
