#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "enclab/nn_ops.hpp"

namespace enclab {

// Raised for invalid configuration or bad user input; the CLI maps it to
// exit code 1 (runtime failures exit 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class Positional { AbsoluteLearned, Rope };
enum class NormKind { LayerNorm, RmsNorm };
enum class NormPlacement { Pre, Post };
enum class Activation { Gelu, Swiglu };

// Gated-FFN width: (2/3) * 4 * d_model rounded to the nearest multiple of 64,
// never below 64. Keeps parameter count level with a 4*d_model GELU FFN.
int64_t ffn_hidden_size(int64_t d_model);

struct ModelConfig {
  int64_t n_layers = 2;
  int64_t d_model = 64;
  int64_t n_heads = 2;
  int64_t vocab_size = 1024;
  int64_t max_positions = 512;
  Positional positional = Positional::Rope;
  double rope_theta = 10000.0;
  std::optional<RopeScaling> rope_scaling;  // disabled by default
  NormKind norm = NormKind::RmsNorm;
  NormPlacement norm_placement = NormPlacement::Pre;
  Activation activation = Activation::Swiglu;
  int64_t ffn_hidden = 0;  // 0 = derive from activation and d_model
  bool use_bias = false;
  bool tie_mlm_head = true;
  float norm_eps = 1e-5f;

  int64_t d_head() const { return d_model / n_heads; }
  int64_t resolved_ffn_hidden() const;

  // Throws ConfigError on hard violations (divisibility, odd rope head dim).
  // Dimensions that are not multiples of 64 are reported via warnings()
  // instead: the 16x1056 ablation configuration is legal.
  void validate() const;
  std::vector<std::string> warnings() const;

  // 28 layers x 768 wide x 12 heads, 30K vocab, SwiGLU + RMSNorm + RoPE,
  // pre-norm, bias-free, tied MLM head.
  static ModelConfig preset_medium();
};

enum class OptimizerKind { Adam, AdamW };
enum class SchedulerKind { Linear, Cosine };
enum class PackMode { Padded, PackedNaive, PackedBlockDiagonal };

// Fraction of selected tokens replaced by MASK / a random id / kept as-is.
struct MaskingScheme {
  double mask_frac = 1.0;
  double random_frac = 0.0;
  double keep_frac = 0.0;
};

struct StagePlan {
  int64_t max_len = 1024;
  int64_t steps = 0;
  // Source probabilities: (base, >1024 tokens, >2048 tokens).
  std::array<double, 3> mixture{1.0, 0.0, 0.0};
};

struct TrainPlan {
  double peak_lr = 6e-4;
  int64_t warmup_steps = 2000;
  double decay_fraction = 0.9;   // cosine region ends at this fraction of total
  double floor_fraction = 0.1;   // final lr as a fraction of peak
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  int64_t batch_tokens = 2'000'000;  // row capacity per step, padding included
  double mask_rate = 0.2;
  MaskingScheme mask_scheme;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  SchedulerKind scheduler = SchedulerKind::Cosine;
  PackMode pack_mode = PackMode::Padded;
  uint64_t seed = 0;
  std::vector<StagePlan> stages;

  int64_t total_steps() const;
  void validate() const;

  // Stage 1 at 1,024 on the base stream, stage 2 at 4,096 on the
  // 0.2/0.4/0.4 length mixture.
  static TrainPlan two_stage_plan(int64_t stage1_steps, int64_t stage2_steps);
};

const char* to_string(Positional v);
const char* to_string(NormKind v);
const char* to_string(NormPlacement v);
const char* to_string(Activation v);
const char* to_string(OptimizerKind v);
const char* to_string(SchedulerKind v);
const char* to_string(PackMode v);

Positional positional_from_string(const std::string& s);
NormKind norm_from_string(const std::string& s);
NormPlacement placement_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);
SchedulerKind scheduler_from_string(const std::string& s);
PackMode pack_mode_from_string(const std::string& s);

}  // namespace enclab
