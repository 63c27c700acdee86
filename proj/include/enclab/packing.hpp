#pragma once

#include <cstdint>
#include <vector>

#include "enclab/config.hpp"
#include "enclab/nn_ops.hpp"
#include "enclab/rng.hpp"
#include "enclab/tokenizer.hpp"

namespace enclab {

// Label value at positions that do not contribute to the MLM loss.
constexpr int32_t kIgnoreLabel = -1;
// seq_id carried by padding tokens; matches no real sequence in the mask.
constexpr int32_t kPadSeqId = -1;

// One attention row: a flat run of tokens from one or more source sequences.
// Positions restart at 0 at every seq_id boundary. A training step consumes a
// list of these rows.
struct PackedBatch {
  std::vector<int32_t> token_ids;
  std::vector<int32_t> positions;
  std::vector<int32_t> seq_ids;
  std::vector<int32_t> mlm_labels;
  PackMode mask_mode = PackMode::Padded;

  int64_t size() const { return static_cast<int64_t>(token_ids.size()); }
  int64_t labeled_count() const;

  MaskDescriptor mask() const;
  // 1 where the token belongs to a real sequence (seq_id >= 0).
  std::vector<uint8_t> valid() const;
};

// One unpadded row holding a single sequence (inference convenience).
PackedBatch single_sequence_row(const std::vector<int32_t>& ids);

// Lays out documents into attention rows. Padded mode gives one document per
// row, padded to max_len. Packed modes concatenate documents greedily
// first-fit up to max_len; naive packing leaves the mask full so attention
// crosses document boundaries, block-diagonal restricts it to matching
// seq_ids. Documents longer than max_len are truncated. seq_ids number the
// documents in input order.
std::vector<PackedBatch> pack_sequences(
    const std::vector<std::vector<int32_t>>& docs, int64_t max_len,
    PackMode mode, int32_t pad_id);

struct CorruptResult {
  std::vector<int32_t> inputs;
  std::vector<int32_t> labels;  // original id at selected positions, else kIgnoreLabel
};

// Independently selects each non-special token with probability `rate` and
// replaces it by MASK / a random content id / itself according to `scheme`.
CorruptResult mlm_corrupt(const std::vector<int32_t>& tokens, double rate,
                          const MaskingScheme& scheme, const Tokenizer& tok,
                          Rng& rng);

// Draws documents from {base, >1024 tokens, >2048 tokens} with fixed source
// probabilities, then uniformly within the source. The length filters are
// applied here; draws are with replacement.
class LengthMixtureSampler {
 public:
  static constexpr int64_t kLongThreshold1 = 1024;
  static constexpr int64_t kLongThreshold2 = 2048;

  LengthMixtureSampler(const std::vector<std::vector<int32_t>>& docs,
                       const std::array<double, 3>& probs);

  // Returns a document index into the corpus passed at construction.
  int64_t draw(Rng& rng) const;

  int64_t source_size(int source) const {
    return static_cast<int64_t>(buckets_[static_cast<size_t>(source)].size());
  }

 private:
  const std::vector<std::vector<int32_t>>* docs_;
  std::array<std::vector<int64_t>, 3> buckets_;
  std::array<double, 3> probs_;
};

}  // namespace enclab
