#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enclab/encoder.hpp"
#include "enclab/optim.hpp"
#include "enclab/rng.hpp"
#include "enclab/tensor.hpp"
#include "enclab/tokenizer.hpp"

namespace enclab {

// One supervised pair: instruction-prefixed query, its positive document, and
// optional curated hard negatives. The instruction applies to the query side
// only.
struct PairExample {
  std::string task;
  std::string instruction;
  std::string query;
  std::string positive;
  std::vector<std::string> hard_negatives;
};

struct ContrastiveConfig {
  double temperature = 0.07;
  double alpha = 0.5;       // dataset-size sampling exponent
  int64_t steps = 2000;
  int64_t batch_size = 64;  // task-homogeneous pairs per step
  double lr = 2e-5;         // fixed, no schedule
  uint64_t seed = 0;

  void validate() const;
};

// Tab-separated records: task, instruction, query, positive, zero or more
// hard negatives. UTF-8, one record per line.
std::vector<PairExample> load_pair_file(const std::string& path);
void save_pair_file(const std::string& path,
                    const std::vector<PairExample>& pairs);

double cosine_sim(std::span<const float> u, std::span<const float> v);

// pi_i = n_i^alpha / sum_j n_j^alpha.
std::vector<double> dataset_mix_probs(const std::vector<int64_t>& sizes,
                                      double alpha);

// -log( e^{s+/t} / (e^{s+/t} + sum_j e^{s-_j/t}) ), max-shifted. sim_pos is a
// scalar tensor, sim_negs a vector tensor; differentiable through both.
Tensor info_nce(const Tensor& sim_pos, const Tensor& sim_negs, double temperature);

// Convenience for plain values (no gradient flow).
double info_nce_value(double sim_pos, const std::vector<double>& sim_negs,
                      double temperature);

struct ContrastiveBatch {
  std::vector<int64_t> indices;  // into the task pool
};

// Samples batch_size distinct pool entries. All examples must share one task
// tag; every query's negatives are the other in-batch positives plus its own
// hard negatives.
ContrastiveBatch build_batch(const std::vector<PairExample>& pool,
                             int64_t batch_size, Rng& rng);

// tokenize(instruction ++ SEP ++ text) for queries, text alone for documents,
// then encoder forward, mean pool over real tokens, L2-normalize.
// Differentiable when a tape is active.
Tensor embed(const EncoderModel& model, const Tokenizer& tok,
             const std::string& text, const std::string& instruction = "");

struct FinetuneResult {
  std::vector<double> loss_trace;
  std::vector<int64_t> dataset_picks;  // chosen dataset index per step
};

// Unified contrastive fine-tune: each step picks a dataset by
// dataset_mix_probs, builds a task-homogeneous batch, and minimizes the mean
// InfoNCE over queries with in-batch plus hard negatives.
FinetuneResult finetune_contrastive(
    EncoderModel& model, const Tokenizer& tok,
    const std::vector<std::vector<PairExample>>& datasets,
    const ContrastiveConfig& cfg);

}  // namespace enclab
