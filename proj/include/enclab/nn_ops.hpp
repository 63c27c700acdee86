#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "enclab/tensor.hpp"

namespace enclab {

// Which key positions each query position may attend to.
struct MaskDescriptor {
  enum class Kind {
    Full,     // every pair allowed (naive packing)
    SameSeq,  // allowed iff seq_ids match and are >= 0 (block-diagonal;
              // padding rows carry seq_id -1 and match nothing)
    Custom,   // explicit seq x seq boolean matrix, row-major
  };

  Kind kind = Kind::Full;
  std::vector<int32_t> seq_ids;   // SameSeq: one id per position
  std::vector<uint8_t> allowed;   // Custom: seq*seq entries

  static MaskDescriptor full(int64_t seq);
  static MaskDescriptor same_seq(std::vector<int32_t> seq_ids);
  static MaskDescriptor custom(int64_t seq, std::vector<uint8_t> allowed);

  int64_t seq_len() const { return seq_; }
  bool is_allowed(int64_t q, int64_t k) const;

 private:
  int64_t seq_ = 0;
};

// Frequency scaling for positions beyond the trained context. Interpolates
// low-frequency bands by 1/scale with a linear ramp between the band-ratio
// bounds; scale 1 is the identity.
struct RopeScaling {
  double scale = 1.0;
  int64_t original_max_positions = 0;
  double ramp_low = 1.0;    // full interpolation below this many rotations
  double ramp_high = 32.0;  // no interpolation above this many rotations
};

namespace ops {

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);

// y_i = gain_i * x_i / sqrt(mean(x^2) + eps), rowwise over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps);

// Gain-only LayerNorm: y_i = gain_i * (x_i - mean) / sqrt(var + eps).
Tensor layer_norm(const Tensor& x, const Tensor& gain, float eps);

// In-place pairwise rotation of (x[2i], x[2i+1]) by position * theta^(-2i/d)
// applied to a fresh copy. x: [seq, n_heads, d_head], d_head even.
Tensor rope_apply(const Tensor& x, const std::vector<int32_t>& positions,
                  double theta, const std::optional<RopeScaling>& scaling = {});

// Per-band angular frequencies after optional scaling.
std::vector<double> rope_frequencies(int64_t d_head, double theta,
                                     const std::optional<RopeScaling>& scaling);

// Exact scaled dot-product attention, softmax(Q K^T / sqrt(d_head) + mask) V
// per head. Q,K,V: [seq, n_heads, d_head]. Fully masked query rows produce
// zero output rows.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const MaskDescriptor& mask);

// Gated FFN: W2^T( silu(W1^T x) .* (W3^T x) ). x: [tokens, d_model],
// W1/W3: [d_model, hidden], W2: [hidden, d_model].
Tensor swiglu_ffn(const Tensor& x, const Tensor& w1, const Tensor& w2,
                  const Tensor& w3);

// Mean of rows where valid[i] != 0; throws if none are.
Tensor mean_pool(const Tensor& hidden, const std::vector<uint8_t>& valid);

// Rowwise x / ||x||; throws on a zero row.
Tensor l2_normalize_rows(const Tensor& x);

}  // namespace ops

}  // namespace enclab
