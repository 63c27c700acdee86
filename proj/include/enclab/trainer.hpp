#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "enclab/checkpoint.hpp"
#include "enclab/config.hpp"
#include "enclab/encoder.hpp"
#include "enclab/optim.hpp"
#include "enclab/packing.hpp"
#include "enclab/rng.hpp"
#include "enclab/tokenizer.hpp"

namespace enclab {

struct TrainStepResult {
  double loss = 0.0;
  int64_t labeled_tokens = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
};

// Also packs labels alongside inputs so MLM targets survive the layout.
std::vector<PackedBatch> pack_corrupted(const std::vector<CorruptResult>& docs,
                                        int64_t max_len, PackMode mode,
                                        int32_t pad_id);

// Builds the model described by the checkpoint's config block and loads its
// parameter tensors (optimizer state records are ignored here).
EncoderModel model_from_checkpoint(const Checkpoint& ckpt);

// MLM training loop: draws documents through the stage's length-mixture
// sampler, corrupts, packs, and steps AdamW under the warmup/decay schedule.
// All randomness flows through one serialized stream, so a run is a pure
// function of (plan.seed, corpus) and resuming from a checkpoint continues
// the exact trace.
class Trainer {
 public:
  Trainer(EncoderModel& model, const Tokenizer& tok, TrainPlan plan);

  TrainStepResult train_step(const std::vector<PackedBatch>& rows);

  struct PretrainResult {
    std::vector<std::string> checkpoint_paths;
    std::vector<double> loss_trace;  // one entry per optimizer step
  };

  using StepCallback =
      std::function<void(int64_t step, const TrainStepResult&)>;

  // Runs the remaining stages over the tokenized corpus, emitting one
  // checkpoint at the end of each stage into out_dir (empty = no files).
  PretrainResult pretrain(const std::vector<std::vector<int32_t>>& docs,
                          const std::string& out_dir,
                          const StepCallback& on_step = {});

  // Draws and prepares the rows for one step of the given stage.
  std::vector<PackedBatch> next_batch(const LengthMixtureSampler& sampler,
                                      const std::vector<std::vector<int32_t>>& docs,
                                      const StagePlan& stage);

  int64_t step() const { return step_; }
  const TrainPlan& plan() const { return plan_; }
  EncoderModel& model() { return model_; }

  Checkpoint to_checkpoint() const;
  void save_state(const std::string& path) const;
  // Restores optimizer/rng/cursor state; the model must already hold the
  // checkpoint's parameter values.
  void restore(const Checkpoint& ckpt);

 private:
  EncoderModel& model_;
  const Tokenizer& tok_;
  TrainPlan plan_;
  AdamOptimizer opt_;
  Rng rng_;
  int64_t step_ = 0;
  int64_t stage_index_ = 0;
  int64_t step_in_stage_ = 0;
};

}  // namespace enclab
