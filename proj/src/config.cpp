#include "enclab/config.hpp"

#include <cmath>

namespace enclab {

int64_t ffn_hidden_size(int64_t d_model) {
  if (d_model <= 0) throw ConfigError("ffn_hidden_size: d_model must be > 0");
  const double raw = (2.0 / 3.0) * 4.0 * double(d_model);
  int64_t rounded = static_cast<int64_t>(std::llround(raw / 64.0)) * 64;
  return std::max<int64_t>(rounded, 64);
}

int64_t ModelConfig::resolved_ffn_hidden() const {
  if (ffn_hidden > 0) return ffn_hidden;
  return activation == Activation::Swiglu ? ffn_hidden_size(d_model)
                                          : 4 * d_model;
}

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || vocab_size <= 0 ||
      max_positions <= 0)
    throw ConfigError("model config: all dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  if (positional == Positional::Rope && d_head() % 2 != 0)
    throw ConfigError("model config: rope requires even d_head, got " +
                      std::to_string(d_head()));
  if (rope_scaling) {
    if (rope_scaling->scale <= 0)
      throw ConfigError("model config: rope scale must be > 0");
    if (rope_scaling->original_max_positions <= 0)
      throw ConfigError("model config: rope original_max_positions must be > 0");
  }
  if (norm_eps < 0) throw ConfigError("model config: norm_eps must be >= 0");
}

std::vector<std::string> ModelConfig::warnings() const {
  std::vector<std::string> out;
  if (d_model % 64 != 0)
    out.push_back("d_model " + std::to_string(d_model) +
                  " is not a multiple of 64");
  if (resolved_ffn_hidden() % 64 != 0)
    out.push_back("ffn_hidden " + std::to_string(resolved_ffn_hidden()) +
                  " is not a multiple of 64");
  return out;
}

ModelConfig ModelConfig::preset_medium() {
  ModelConfig cfg;
  cfg.n_layers = 28;
  cfg.d_model = 768;
  cfg.n_heads = 12;
  cfg.vocab_size = 30000;
  cfg.max_positions = 4096;
  cfg.positional = Positional::Rope;
  cfg.norm = NormKind::RmsNorm;
  cfg.norm_placement = NormPlacement::Pre;
  cfg.activation = Activation::Swiglu;
  cfg.ffn_hidden = 0;  // 2048
  cfg.use_bias = false;
  cfg.tie_mlm_head = true;
  return cfg;
}

int64_t TrainPlan::total_steps() const {
  int64_t total = 0;
  for (const auto& s : stages) total += s.steps;
  return total;
}

void TrainPlan::validate() const {
  if (peak_lr <= 0) throw ConfigError("train plan: peak_lr must be > 0");
  if (floor_fraction <= 0 || floor_fraction > 1)
    throw ConfigError("train plan: floor_fraction must be in (0, 1]");
  if (decay_fraction <= 0 || decay_fraction > 1)
    throw ConfigError("train plan: decay_fraction must be in (0, 1]");
  if (warmup_steps < 0) throw ConfigError("train plan: warmup_steps must be >= 0");
  if (stages.empty()) throw ConfigError("train plan: at least one stage required");
  if (warmup_steps >= total_steps())
    throw ConfigError("train plan: warmup_steps must be below total steps");
  if (clip_norm <= 0) throw ConfigError("train plan: clip_norm must be > 0");
  if (batch_tokens <= 0) throw ConfigError("train plan: batch_tokens must be > 0");
  if (mask_rate < 0 || mask_rate > 1)
    throw ConfigError("train plan: mask_rate must be in [0, 1]");
  const auto& s = mask_scheme;
  if (s.mask_frac < 0 || s.random_frac < 0 || s.keep_frac < 0 ||
      std::abs(s.mask_frac + s.random_frac + s.keep_frac - 1.0) > 1e-9)
    throw ConfigError("train plan: masking scheme fractions must be nonnegative and sum to 1");
  for (const auto& st : stages) {
    if (st.max_len <= 0 || st.steps <= 0)
      throw ConfigError("train plan: stage max_len and steps must be > 0");
    double total = st.mixture[0] + st.mixture[1] + st.mixture[2];
    if (st.mixture[0] < 0 || st.mixture[1] < 0 || st.mixture[2] < 0 ||
        std::abs(total - 1.0) > 1e-9)
      throw ConfigError("train plan: stage mixture must be a probability vector");
  }
}

TrainPlan TrainPlan::two_stage_plan(int64_t stage1_steps, int64_t stage2_steps) {
  TrainPlan plan;
  plan.stages = {
      StagePlan{1024, stage1_steps, {1.0, 0.0, 0.0}},
      StagePlan{4096, stage2_steps, {0.2, 0.4, 0.4}},
  };
  return plan;
}

const char* to_string(Positional v) {
  return v == Positional::Rope ? "rope" : "absolute-learned";
}
const char* to_string(NormKind v) {
  return v == NormKind::RmsNorm ? "rmsnorm" : "layernorm";
}
const char* to_string(NormPlacement v) {
  return v == NormPlacement::Pre ? "pre" : "post";
}
const char* to_string(Activation v) {
  return v == Activation::Swiglu ? "swiglu" : "gelu";
}
const char* to_string(OptimizerKind v) {
  return v == OptimizerKind::AdamW ? "adamw" : "adam";
}
const char* to_string(SchedulerKind v) {
  return v == SchedulerKind::Cosine ? "cosine" : "linear";
}
const char* to_string(PackMode v) {
  switch (v) {
    case PackMode::Padded: return "padded";
    case PackMode::PackedNaive: return "packed-naive";
    case PackMode::PackedBlockDiagonal: return "packed-block-diagonal";
  }
  return "padded";
}

namespace {
[[noreturn]] void bad_enum(const char* what, const std::string& s) {
  throw ConfigError(std::string("unknown ") + what + " value '" + s + "'");
}
}  // namespace

Positional positional_from_string(const std::string& s) {
  if (s == "rope") return Positional::Rope;
  if (s == "absolute-learned") return Positional::AbsoluteLearned;
  bad_enum("positional", s);
}
NormKind norm_from_string(const std::string& s) {
  if (s == "rmsnorm") return NormKind::RmsNorm;
  if (s == "layernorm") return NormKind::LayerNorm;
  bad_enum("norm", s);
}
NormPlacement placement_from_string(const std::string& s) {
  if (s == "pre") return NormPlacement::Pre;
  if (s == "post") return NormPlacement::Post;
  bad_enum("norm_placement", s);
}
Activation activation_from_string(const std::string& s) {
  if (s == "swiglu") return Activation::Swiglu;
  if (s == "gelu") return Activation::Gelu;
  bad_enum("activation", s);
}
OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adamw") return OptimizerKind::AdamW;
  if (s == "adam") return OptimizerKind::Adam;
  bad_enum("optimizer", s);
}
SchedulerKind scheduler_from_string(const std::string& s) {
  if (s == "cosine") return SchedulerKind::Cosine;
  if (s == "linear") return SchedulerKind::Linear;
  bad_enum("scheduler", s);
}
PackMode pack_mode_from_string(const std::string& s) {
  if (s == "padded") return PackMode::Padded;
  if (s == "packed-naive") return PackMode::PackedNaive;
  if (s == "packed-block-diagonal") return PackMode::PackedBlockDiagonal;
  bad_enum("pack_mode", s);
}

}  // namespace enclab
