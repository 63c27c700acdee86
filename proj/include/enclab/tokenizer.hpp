#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "enclab/rng.hpp"

namespace enclab {

enum class TokenizerMode { WhitespaceVocab, CharFallback, ExternalVocabFile };

// Whitespace tokenizer over a fixed vocabulary. Special ids are distinct and
// reserved below id 100; content ids start at kReservedIds for built
// vocabularies. Real subword vocabularies load through an external file with
// one token per line (specials listed first).
class Tokenizer {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kCls = 2;
  static constexpr int32_t kSep = 3;
  static constexpr int32_t kMask = 4;
  static constexpr int32_t kReservedIds = 100;

  // Builds a frequency-ranked vocabulary from the corpus. CharFallback mode
  // additionally registers every single character seen so out-of-vocabulary
  // words decompose instead of collapsing to UNK.
  static Tokenizer from_corpus(const std::vector<std::string>& docs,
                               int64_t max_vocab, TokenizerMode mode);

  static Tokenizer from_vocab_file(const std::string& path);

  // Content ids only; unknown words map to UNK (or characters in
  // CharFallback mode).
  std::vector<int32_t> encode(const std::string& text) const;

  // CLS + content + SEP, content truncated to fit max_len when > 0.
  std::vector<int32_t> encode_document(const std::string& text,
                                       int64_t max_len = 0) const;

  // Joins content tokens with single spaces; special ids are skipped.
  std::string decode(const std::vector<int32_t>& ids) const;

  bool is_special(int32_t id) const;
  int32_t vocab_size() const { return static_cast<int32_t>(id_to_token_.size()); }
  int32_t content_start() const { return content_start_; }
  int32_t content_count() const { return vocab_size() - content_start_; }
  int32_t mask_id() const { return mask_id_; }
  int32_t pad_id() const { return pad_id_; }
  int32_t cls_id() const { return cls_id_; }
  int32_t sep_id() const { return sep_id_; }
  int32_t unk_id() const { return unk_id_; }
  TokenizerMode mode() const { return mode_; }

  // Uniform draw over content ids, used by the random-replacement branch of
  // MLM corruption.
  int32_t random_content_id(Rng& rng) const;

 private:
  Tokenizer() = default;
  void index_tokens();

  TokenizerMode mode_ = TokenizerMode::WhitespaceVocab;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
  std::vector<uint8_t> special_;
  int32_t content_start_ = kReservedIds;
  int32_t pad_id_ = kPad, unk_id_ = kUnk, cls_id_ = kCls, sep_id_ = kSep,
          mask_id_ = kMask;
};

}  // namespace enclab
