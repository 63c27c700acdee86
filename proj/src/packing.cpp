#include "enclab/packing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace enclab {

int64_t PackedBatch::labeled_count() const {
  int64_t c = 0;
  for (int32_t l : mlm_labels)
    if (l != kIgnoreLabel) ++c;
  return c;
}

MaskDescriptor PackedBatch::mask() const {
  if (mask_mode == PackMode::PackedNaive) return MaskDescriptor::full(size());
  return MaskDescriptor::same_seq(seq_ids);
}

std::vector<uint8_t> PackedBatch::valid() const {
  std::vector<uint8_t> v(seq_ids.size());
  for (size_t i = 0; i < seq_ids.size(); ++i) v[i] = seq_ids[i] >= 0 ? 1 : 0;
  return v;
}

PackedBatch single_sequence_row(const std::vector<int32_t>& ids) {
  PackedBatch row;
  row.mask_mode = PackMode::Padded;
  for (size_t i = 0; i < ids.size(); ++i) {
    row.token_ids.push_back(ids[i]);
    row.positions.push_back(static_cast<int32_t>(i));
    row.seq_ids.push_back(0);
    row.mlm_labels.push_back(kIgnoreLabel);
  }
  return row;
}

std::vector<PackedBatch> pack_sequences(
    const std::vector<std::vector<int32_t>>& docs, int64_t max_len,
    PackMode mode, int32_t pad_id) {
  if (max_len <= 0) throw ConfigError("pack_sequences: max_len must be > 0");
  for (const auto& d : docs)
    if (d.empty()) throw ConfigError("pack_sequences: empty document");

  std::vector<PackedBatch> rows;

  auto append_doc = [&](PackedBatch& row, const std::vector<int32_t>& doc,
                        int32_t seq_id) {
    const int64_t len = std::min<int64_t>(max_len, static_cast<int64_t>(doc.size()));
    for (int64_t i = 0; i < len; ++i) {
      row.token_ids.push_back(doc[static_cast<size_t>(i)]);
      row.positions.push_back(static_cast<int32_t>(i));
      row.seq_ids.push_back(seq_id);
      row.mlm_labels.push_back(kIgnoreLabel);
    }
  };

  if (mode == PackMode::Padded) {
    for (size_t d = 0; d < docs.size(); ++d) {
      PackedBatch row;
      row.mask_mode = mode;
      append_doc(row, docs[d], static_cast<int32_t>(d));
      while (row.size() < max_len) {
        row.positions.push_back(static_cast<int32_t>(row.size()));
        row.token_ids.push_back(pad_id);
        row.seq_ids.push_back(kPadSeqId);
        row.mlm_labels.push_back(kIgnoreLabel);
      }
      rows.push_back(std::move(row));
    }
    return rows;
  }

  // First-fit: place each document in the first row with enough room left.
  for (size_t d = 0; d < docs.size(); ++d) {
    const int64_t len =
        std::min<int64_t>(max_len, static_cast<int64_t>(docs[d].size()));
    PackedBatch* target = nullptr;
    for (auto& row : rows) {
      if (row.size() + len <= max_len) {
        target = &row;
        break;
      }
    }
    if (!target) {
      rows.emplace_back();
      rows.back().mask_mode = mode;
      target = &rows.back();
    }
    append_doc(*target, docs[d], static_cast<int32_t>(d));
  }
  return rows;
}

CorruptResult mlm_corrupt(const std::vector<int32_t>& tokens, double rate,
                          const MaskingScheme& scheme, const Tokenizer& tok,
                          Rng& rng) {
  if (rate < 0.0 || rate > 1.0)
    throw ConfigError("mlm_corrupt: rate " + std::to_string(rate) +
                      " outside [0, 1]");
  CorruptResult out;
  out.inputs = tokens;
  out.labels.assign(tokens.size(), kIgnoreLabel);
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tok.is_special(tokens[i])) continue;
    if (!rng.bernoulli(rate)) continue;
    out.labels[i] = tokens[i];
    const double r = rng.uniform();
    if (r < scheme.mask_frac) {
      out.inputs[i] = tok.mask_id();
    } else if (r < scheme.mask_frac + scheme.random_frac) {
      out.inputs[i] = tok.random_content_id(rng);
    }
    // keep branch: input unchanged, label set
  }
  return out;
}

LengthMixtureSampler::LengthMixtureSampler(
    const std::vector<std::vector<int32_t>>& docs,
    const std::array<double, 3>& probs)
    : docs_(&docs), probs_(probs) {
  double total = probs[0] + probs[1] + probs[2];
  if (probs[0] < 0 || probs[1] < 0 || probs[2] < 0 ||
      std::abs(total - 1.0) > 1e-9)
    throw ConfigError("mixture sampler: probabilities must be nonnegative and sum to 1");
  for (size_t i = 0; i < docs.size(); ++i) {
    const int64_t len = static_cast<int64_t>(docs[i].size());
    buckets_[0].push_back(static_cast<int64_t>(i));
    if (len > kLongThreshold1) buckets_[1].push_back(static_cast<int64_t>(i));
    if (len > kLongThreshold2) buckets_[2].push_back(static_cast<int64_t>(i));
  }
}

int64_t LengthMixtureSampler::draw(Rng& rng) const {
  static const char* kSourceNames[3] = {"base", "long1024", "long2048"};
  const double r = rng.uniform();
  int source = 0;
  if (r >= probs_[0]) source = (r < probs_[0] + probs_[1]) ? 1 : 2;
  const auto& bucket = buckets_[static_cast<size_t>(source)];
  if (bucket.empty())
    throw std::runtime_error(std::string("mixture sampler: source ") +
                             kSourceNames[source] + " is empty");
  return bucket[static_cast<size_t>(rng.uniform_int(
      static_cast<int64_t>(bucket.size())))];
}

}  // namespace enclab
