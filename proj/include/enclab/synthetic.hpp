#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enclab/contrastive.hpp"

namespace enclab {

// Topic-coded toy corpus: each document opens with a topic word and draws the
// rest of its tokens from that topic's private vocabulary, so masked tokens
// are predictable from any in-document context.
struct SyntheticCorpusOptions {
  int64_t n_docs = 400;
  int64_t n_topics = 8;
  int64_t words_per_topic = 24;
  int64_t min_len = 16;
  int64_t max_len = 60;
  // Fractions of documents stretched past the long-bucket thresholds.
  double frac_over_1024 = 0.0;
  double frac_over_2048 = 0.0;
  uint64_t seed = 0;
};

std::vector<std::string> synthetic_topic_corpus(const SyntheticCorpusOptions& opt);

void write_lines(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::string& path);

// Paired-pattern retrieval task: queries and documents share a pattern token;
// filler tokens differ. Returns train and held-out splits drawn from the same
// patterns.
struct SyntheticPairOptions {
  int64_t n_patterns = 16;
  int64_t pairs_per_pattern = 8;
  int64_t heldout_per_pattern = 2;
  int64_t filler_vocab = 20;
  int64_t fillers_per_text = 3;
  int64_t hard_negatives = 0;
  std::string task = "toy-retrieval";
  std::string instruction = "match the paired pattern";
  uint64_t seed = 0;
};

struct SyntheticPairData {
  std::vector<PairExample> train;
  std::vector<PairExample> heldout;
};

SyntheticPairData synthetic_pair_dataset(const SyntheticPairOptions& opt);

// Two linearly separable toy text classes (disjoint keyword sets).
struct SyntheticClassifyOptions {
  int64_t n_per_class = 32;
  int64_t n_classes = 2;
  int64_t words_per_text = 6;
  uint64_t seed = 0;
};

struct SyntheticClassifyData {
  std::vector<std::string> texts;
  std::vector<int32_t> labels;
};

SyntheticClassifyData synthetic_classify_dataset(const SyntheticClassifyOptions& opt);

}  // namespace enclab
