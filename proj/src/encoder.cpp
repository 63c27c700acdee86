#include "enclab/encoder.hpp"

#include <algorithm>
#include <stdexcept>

#include "enclab/nn_ops.hpp"
#include "enclab/rng.hpp"

namespace enclab {

using namespace ops;

Tensor EncoderModel::add_param(const std::string& name, Shape shape, bool decay,
                               float init_std, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  if (init_std > 0) {
    float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
      p[i] = static_cast<float>(rng.normal(0.0, init_std));
  }
  params_.push_back(ParamEntry{name, t, decay});
  return t;
}

EncoderModel::EncoderModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t d = cfg_.d_model;
  const int64_t h = cfg_.resolved_ffn_hidden();
  const float std = 0.02f;

  auto add_gain = [&](const std::string& name) {
    Tensor t = add_param(name, {d}, /*decay=*/false, 0.0f, rng);
    for (int64_t i = 0; i < d; ++i) t.data()[i] = 1.0f;
  };

  add_param("tok_emb", {cfg_.vocab_size, d}, /*decay=*/false, std, rng);
  if (cfg_.positional == Positional::AbsoluteLearned)
    add_param("pos_emb", {cfg_.max_positions, d}, /*decay=*/false, std, rng);

  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    add_gain(p + "norm1.gain");
    add_param(p + "attn.wq", {d, d}, true, std, rng);
    add_param(p + "attn.wk", {d, d}, true, std, rng);
    add_param(p + "attn.wv", {d, d}, true, std, rng);
    add_param(p + "attn.wo", {d, d}, true, std, rng);
    if (cfg_.use_bias) {
      add_param(p + "attn.bq", {d}, true, 0.0f, rng);
      add_param(p + "attn.bk", {d}, true, 0.0f, rng);
      add_param(p + "attn.bv", {d}, true, 0.0f, rng);
      add_param(p + "attn.bo", {d}, true, 0.0f, rng);
    }
    add_gain(p + "norm2.gain");
    add_param(p + "ffn.w1", {d, h}, true, std, rng);
    if (cfg_.activation == Activation::Swiglu)
      add_param(p + "ffn.w3", {d, h}, true, std, rng);
    add_param(p + "ffn.w2", {h, d}, true, std, rng);
    if (cfg_.use_bias) {
      add_param(p + "ffn.b1", {h}, true, 0.0f, rng);
      if (cfg_.activation == Activation::Swiglu)
        add_param(p + "ffn.b3", {h}, true, 0.0f, rng);
      add_param(p + "ffn.b2", {d}, true, 0.0f, rng);
    }
  }
  if (cfg_.norm_placement == NormPlacement::Pre) add_gain("final_norm.gain");
  if (!cfg_.tie_mlm_head)
    add_param("mlm_head.weight", {cfg_.vocab_size, d}, true, std, rng);
  add_param("mlm_head.bias", {cfg_.vocab_size}, true, 0.0f, rng);
}

Tensor EncoderModel::param(const std::string& name) const {
  for (const auto& e : params_)
    if (e.name == name) return e.tensor;
  throw std::runtime_error("encoder: no parameter named " + name);
}

Tensor EncoderModel::norm(const Tensor& x, const Tensor& gain) const {
  return cfg_.norm == NormKind::RmsNorm ? rms_norm(x, gain, cfg_.norm_eps)
                                        : layer_norm(x, gain, cfg_.norm_eps);
}

Tensor EncoderModel::forward(const PackedBatch& batch) const {
  const int64_t n = batch.size();
  if (n == 0) throw std::runtime_error("encoder: empty batch");
  for (int32_t id : batch.token_ids)
    if (id < 0 || id >= cfg_.vocab_size)
      throw std::out_of_range("encoder: unknown token id " + std::to_string(id));
  if (cfg_.positional == Positional::AbsoluteLearned) {
    for (int32_t pos : batch.positions)
      if (pos < 0 || pos >= cfg_.max_positions)
        throw std::out_of_range("encoder: position " + std::to_string(pos) +
                                " outside table of " +
                                std::to_string(cfg_.max_positions));
  }

  const int64_t d = cfg_.d_model;
  const int64_t heads = cfg_.n_heads;
  const int64_t dh = cfg_.d_head();
  const MaskDescriptor mask = batch.mask();

  Tensor x = gather_rows(param("tok_emb"), batch.token_ids);
  if (cfg_.positional == Positional::AbsoluteLearned)
    x = add(x, gather_rows(param("pos_emb"), batch.positions));

  const bool pre = cfg_.norm_placement == NormPlacement::Pre;
  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";

    // attention sublayer
    Tensor a_in = pre ? norm(x, param(p + "norm1.gain")) : x;
    Tensor q = matmul(a_in, param(p + "attn.wq"));
    Tensor k = matmul(a_in, param(p + "attn.wk"));
    Tensor v = matmul(a_in, param(p + "attn.wv"));
    if (cfg_.use_bias) {
      q = add_bias(q, param(p + "attn.bq"));
      k = add_bias(k, param(p + "attn.bk"));
      v = add_bias(v, param(p + "attn.bv"));
    }
    Tensor q3 = reshape(q, {n, heads, dh});
    Tensor k3 = reshape(k, {n, heads, dh});
    Tensor v3 = reshape(v, {n, heads, dh});
    if (cfg_.positional == Positional::Rope) {
      q3 = rope_apply(q3, batch.positions, cfg_.rope_theta, cfg_.rope_scaling);
      k3 = rope_apply(k3, batch.positions, cfg_.rope_theta, cfg_.rope_scaling);
    }
    Tensor attn = reshape(attention(q3, k3, v3, mask), {n, d});
    Tensor o = matmul(attn, param(p + "attn.wo"));
    if (cfg_.use_bias) o = add_bias(o, param(p + "attn.bo"));
    x = add(x, o);
    if (!pre) x = norm(x, param(p + "norm1.gain"));

    // FFN sublayer
    Tensor f_in = pre ? norm(x, param(p + "norm2.gain")) : x;
    Tensor y;
    if (cfg_.activation == Activation::Swiglu) {
      Tensor u = matmul(f_in, param(p + "ffn.w1"));
      Tensor g = matmul(f_in, param(p + "ffn.w3"));
      if (cfg_.use_bias) {
        u = add_bias(u, param(p + "ffn.b1"));
        g = add_bias(g, param(p + "ffn.b3"));
      }
      Tensor gated = mul(silu(u), g);
      y = matmul(gated, param(p + "ffn.w2"));
    } else {
      Tensor u = matmul(f_in, param(p + "ffn.w1"));
      if (cfg_.use_bias) u = add_bias(u, param(p + "ffn.b1"));
      y = matmul(gelu(u), param(p + "ffn.w2"));
    }
    if (cfg_.use_bias) y = add_bias(y, param(p + "ffn.b2"));
    x = add(x, y);
    if (!pre) x = norm(x, param(p + "norm2.gain"));
  }

  if (pre) x = norm(x, param("final_norm.gain"));
  return x;
}

Tensor EncoderModel::mlm_logits(const Tensor& hidden) const {
  Tensor w = cfg_.tie_mlm_head ? param("tok_emb") : param("mlm_head.weight");
  return add_bias(matmul_nt(hidden, w), param("mlm_head.bias"));
}

int64_t EncoderModel::param_count_registry() const {
  int64_t total = 0;
  for (const auto& e : params_) total += e.tensor.numel();
  return total;
}

EncoderModel EncoderModel::clone() const {
  EncoderModel copy;
  copy.cfg_ = cfg_;
  copy.params_.reserve(params_.size());
  for (const auto& e : params_) {
    Tensor t = Tensor::from_data(e.tensor.shape(), e.tensor.to_vector(),
                                 /*requires_grad=*/true);
    copy.params_.push_back(ParamEntry{e.name, t, e.weight_decay});
  }
  return copy;
}

void EncoderModel::load_param_values(
    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  for (const auto& [name, value] : tensors) {
    bool found = false;
    for (auto& e : params_) {
      if (e.name != name) continue;
      if (e.tensor.shape() != value.shape())
        throw std::runtime_error("encoder: shape mismatch loading " + name +
                                 ": " + shape_str(e.tensor.shape()) + " vs " +
                                 shape_str(value.shape()));
      std::copy(value.data(), value.data() + value.numel(), e.tensor.data());
      found = true;
      break;
    }
    if (!found)
      throw std::runtime_error("encoder: checkpoint tensor " + name +
                               " has no matching parameter");
  }
}

int64_t param_count(const ModelConfig& cfg) {
  const int64_t d = cfg.d_model;
  const int64_t h = cfg.resolved_ffn_hidden();
  const int64_t v = cfg.vocab_size;

  int64_t total = v * d;  // token embedding
  if (cfg.positional == Positional::AbsoluteLearned) total += cfg.max_positions * d;

  int64_t per_layer = 2 * d;     // two norm gains
  per_layer += 4 * d * d;        // attention projections
  if (cfg.use_bias) per_layer += 4 * d;
  if (cfg.activation == Activation::Swiglu) {
    per_layer += 3 * d * h;
    if (cfg.use_bias) per_layer += 2 * h + d;
  } else {
    per_layer += 2 * d * h;
    if (cfg.use_bias) per_layer += h + d;
  }
  total += cfg.n_layers * per_layer;

  if (cfg.norm_placement == NormPlacement::Pre) total += d;  // final norm gain
  if (!cfg.tie_mlm_head) total += v * d;
  total += v;  // MLM output bias
  return total;
}

}  // namespace enclab
