#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "enclab/encoder.hpp"
#include "enclab/tokenizer.hpp"

namespace enclab {

// Anything that can score token sequences with per-position logits.
// pseudo_perplexity drives it once per masked variant; implementations may
// batch variants.
class LogitModel {
 public:
  virtual ~LogitModel() = default;
  virtual int64_t vocab() const = 0;
  // [n, vocab] logits for one sequence.
  virtual Tensor logits(const std::vector<int32_t>& ids) = 0;
  // Default runs the variants one by one; the encoder adapter packs them
  // into block-diagonal batches instead.
  virtual std::vector<Tensor> logits_batch(
      const std::vector<std::vector<int32_t>>& batch);
};

// Inference adapter over a trained encoder. variant_batch > 1 packs that
// many masked variants into one block-diagonal forward; results are
// independent of the grouping.
class EncoderLogitModel : public LogitModel {
 public:
  EncoderLogitModel(const EncoderModel& model, int64_t variant_batch = 8);
  int64_t vocab() const override;
  Tensor logits(const std::vector<int32_t>& ids) override;
  std::vector<Tensor> logits_batch(
      const std::vector<std::vector<int32_t>>& batch) override;

 private:
  const EncoderModel& model_;
  int64_t variant_batch_;
};

struct PpplResult {
  double pppl = 0.0;
  std::vector<double> per_token_loss;  // l_i per position
};

// Masks each position in turn, scores the true token, and returns
// exp(mean l_i). Sequences beyond an absolute-positional model's range are an
// error, never truncated.
PpplResult pseudo_perplexity(LogitModel& model, const std::vector<int32_t>& tokens,
                             int32_t mask_id);

struct PpplRecord {
  int64_t length = 0;
  double pppl = 0.0;
};

struct PpplBin {
  int64_t lo = 0;  // exclusive
  int64_t hi = 0;  // inclusive
  double mean_pppl = 0.0;
  int64_t count = 0;
};

struct PpplReport {
  std::vector<PpplRecord> records;
  std::vector<PpplBin> bins;
};

// Per-sequence pseudo-perplexity over a corpus sample, aggregated into
// (lo, hi] length bins. bin_edges must be sorted ascending; default doubling
// {64, 128, 256, ...} via make_doubling_bins.
PpplReport pppl_curve(LogitModel& model,
                      const std::vector<std::vector<int32_t>>& sample,
                      int32_t mask_id, const std::vector<int64_t>& bin_edges);

std::vector<int64_t> make_doubling_bins(int64_t first, int64_t last);

std::string pppl_report_tsv(const PpplReport& report);
std::string pppl_curve_csv(const PpplReport& report);

struct RetrievalResult {
  double acc_at_1 = 0.0;
  double mrr = 0.0;
};

// Ranks documents by cosine similarity per query; gold is one document index
// per query. Ties break toward the lower document index.
RetrievalResult retrieval_eval(const std::vector<std::vector<float>>& queries,
                               const std::vector<std::vector<float>>& documents,
                               const std::vector<int64_t>& gold);

struct LabeledText {
  std::string text;
  int32_t label = 0;      // class id, or ignored for regression
  float target = 0.0f;    // regression target
};

struct ClassifyGrid {
  std::vector<double> lrs{1e-5, 2e-5, 3e-5};
  std::vector<int64_t> batch_sizes{16, 32};
  std::vector<double> weight_decays{1e-2, 1e-5};
};

enum class PoolingKind { Cls, Mean };

struct ClassifyOptions {
  int64_t n_classes = 2;       // >= 2, or 0 for regression
  int64_t epochs = 10;
  int64_t patience = 15;       // evaluation cycles without improvement
  int64_t max_len = 64;
  PoolingKind pooling = PoolingKind::Cls;
  uint64_t seed = 0;
};

struct ClassifyResult {
  double best_metric = 0.0;  // dev accuracy (or negative MSE for regression)
  double lr = 0.0;
  int64_t batch_size = 0;
  double weight_decay = 0.0;
  int64_t runs = 0;
  int64_t evals = 0;
};

// Attaches a linear head on the pooled representation, grid-searches
// lr x batch x weight decay with early stopping, and returns the best dev
// metric. Evaluation runs every min(500, batches_per_epoch / 10) steps.
ClassifyResult classify_finetune(const EncoderModel& base, const Tokenizer& tok,
                                 const std::vector<LabeledText>& train,
                                 const std::vector<LabeledText>& dev,
                                 const ClassifyGrid& grid,
                                 const ClassifyOptions& options);

}  // namespace enclab
