#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "enclab/config.hpp"
#include "enclab/encoder.hpp"

namespace enclab {

// Piecewise schedule: linear warmup to peak_lr over warmup_steps, then decay
// (cosine or linear per the plan) to floor_fraction * peak_lr at
// decay_fraction * total_steps, constant afterward. Continuous at both
// joints.
double lr_schedule(int64_t step, int64_t total_steps, const TrainPlan& plan);

// Scales every buffer by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns the pre-clip global norm.
double clip_grad_norm(const std::vector<std::span<float>>& grads,
                      double max_norm);

// Gathers the gradient buffers of all registered parameters.
double clip_grad_norm(std::vector<ParamEntry>& params, double max_norm);

// Adam / AdamW with bias-corrected moments. Moment buffers are float32 (so
// checkpoints restore them bit-exactly); the per-element update runs in
// 64-bit. AdamW applies decoupled weight decay, skipping entries whose
// registry flag excludes them (norm gains, embeddings). Plain Adam applies
// no decay at all.
class AdamOptimizer {
 public:
  AdamOptimizer(const TrainPlan& plan, const std::vector<ParamEntry>& params);

  void step(std::vector<ParamEntry>& params, double lr);

  int64_t steps_taken() const { return t_; }

  // Moment buffers for checkpointing, in registry order.
  struct StateRef {
    const std::vector<float>& m;
    const std::vector<float>& v;
  };
  StateRef state(size_t index) const { return {m_[index], v_[index]}; }
  void restore_state(size_t index, std::vector<float> m, std::vector<float> v);
  void set_steps_taken(int64_t t) { t_ = t; }
  size_t slots() const { return m_.size(); }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  OptimizerKind kind_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace enclab
