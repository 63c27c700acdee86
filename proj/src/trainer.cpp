#include "enclab/trainer.hpp"

#include <filesystem>
#include <iostream>

namespace enclab {

using namespace ops;

std::vector<PackedBatch> pack_corrupted(const std::vector<CorruptResult>& docs,
                                        int64_t max_len, PackMode mode,
                                        int32_t pad_id) {
  std::vector<std::vector<int32_t>> inputs;
  inputs.reserve(docs.size());
  for (const auto& d : docs) inputs.push_back(d.inputs);
  std::vector<PackedBatch> rows = pack_sequences(inputs, max_len, mode, pad_id);
  // pack_sequences assigns seq_ids in document order; replay that layout to
  // place the labels.
  for (auto& row : rows) {
    for (int64_t i = 0; i < row.size(); ++i) {
      const int32_t seq = row.seq_ids[static_cast<size_t>(i)];
      if (seq < 0) continue;
      const int32_t pos = row.positions[static_cast<size_t>(i)];
      row.mlm_labels[static_cast<size_t>(i)] =
          docs[static_cast<size_t>(seq)].labels[static_cast<size_t>(pos)];
    }
  }
  return rows;
}

EncoderModel model_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = model_config_from_kv(ckpt.config);
  EncoderModel model(cfg, /*seed=*/0);
  std::vector<std::pair<std::string, Tensor>> values;
  for (const auto& [name, tensor] : ckpt.tensors)
    if (name.rfind("opt.", 0) != 0) values.emplace_back(name, tensor);
  model.load_param_values(values);
  return model;
}

Trainer::Trainer(EncoderModel& model, const Tokenizer& tok, TrainPlan plan)
    : model_(model),
      tok_(tok),
      plan_(std::move(plan)),
      opt_(plan_, model.params()),
      rng_(plan_.seed) {
  plan_.validate();
  if (tok_.vocab_size() != model_.config().vocab_size)
    throw ConfigError("trainer: tokenizer vocab " +
                      std::to_string(tok_.vocab_size()) +
                      " != model vocab " +
                      std::to_string(model_.config().vocab_size));
}

TrainStepResult Trainer::train_step(const std::vector<PackedBatch>& rows) {
  if (rows.empty()) throw std::runtime_error("train_step: empty batch");

  int64_t labeled = 0;
  for (const auto& row : rows) labeled += row.labeled_count();
  if (labeled == 0) {
    std::cerr << "warning: batch has no labeled positions, skipping step\n";
    return TrainStepResult{0.0, 0, 0.0, 0.0, /*skipped=*/true};
  }

  GradTape tape;
  Tensor total;
  for (const auto& row : rows) {
    if (row.labeled_count() == 0) continue;
    Tensor hidden = model_.forward(row);
    Tensor logits = model_.mlm_logits(hidden);
    Tensor ce = cross_entropy(logits, row.mlm_labels, kIgnoreLabel,
                              Reduction::Sum);
    total = total.defined() ? add(total, ce) : ce;
  }
  Tensor loss = scale(total, 1.0f / static_cast<float>(labeled));
  tape.backward(loss);

  const double gnorm = clip_grad_norm(model_.params(), plan_.clip_norm);
  const double lr = lr_schedule(step_, plan_.total_steps(), plan_);
  opt_.step(model_.params(), lr);
  ++step_;
  return TrainStepResult{loss.item(), labeled, lr, gnorm, false};
}

std::vector<PackedBatch> Trainer::next_batch(
    const LengthMixtureSampler& sampler,
    const std::vector<std::vector<int32_t>>& docs, const StagePlan& stage) {
  const int64_t n_docs = std::max<int64_t>(1, plan_.batch_tokens / stage.max_len);
  std::vector<CorruptResult> corrupted;
  corrupted.reserve(static_cast<size_t>(n_docs));
  for (int64_t i = 0; i < n_docs; ++i) {
    const int64_t idx = sampler.draw(rng_);
    std::vector<int32_t> doc = docs[static_cast<size_t>(idx)];
    if (static_cast<int64_t>(doc.size()) > stage.max_len)
      doc.resize(static_cast<size_t>(stage.max_len));
    corrupted.push_back(
        mlm_corrupt(doc, plan_.mask_rate, plan_.mask_scheme, tok_, rng_));
  }
  return pack_corrupted(corrupted, stage.max_len, plan_.pack_mode, tok_.pad_id());
}

Trainer::PretrainResult Trainer::pretrain(
    const std::vector<std::vector<int32_t>>& docs, const std::string& out_dir,
    const StepCallback& on_step) {
  if (docs.empty()) throw std::runtime_error("pretrain: corpus is empty");
  PretrainResult result;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  while (stage_index_ < static_cast<int64_t>(plan_.stages.size())) {
    const StagePlan& stage = plan_.stages[static_cast<size_t>(stage_index_)];
    LengthMixtureSampler sampler(docs, stage.mixture);
    for (; step_in_stage_ < stage.steps; ++step_in_stage_) {
      auto rows = next_batch(sampler, docs, stage);
      TrainStepResult res = train_step(rows);
      result.loss_trace.push_back(res.loss);
      if (on_step) on_step(step_, res);
    }
    // Cursor moves past the finished stage before the save so a resumed run
    // starts at the next one.
    const int64_t finished = stage_index_;
    step_in_stage_ = 0;
    ++stage_index_;
    if (!out_dir.empty()) {
      const std::string path =
          out_dir + "/stage" + std::to_string(finished + 1) + ".nbkt";
      save_state(path);
      result.checkpoint_paths.push_back(path);
    }
  }
  return result;
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = model_config_to_kv(model_.config());
  ckpt.set("train.step", std::to_string(step_));
  ckpt.set("train.stage", std::to_string(stage_index_));
  ckpt.set("train.step_in_stage", std::to_string(step_in_stage_));
  ckpt.set("train.opt_t", std::to_string(opt_.steps_taken()));
  ckpt.set("train.rng", rng_.serialize());
  const auto& params = model_.params();
  for (const auto& e : params) ckpt.tensors.emplace_back(e.name, e.tensor);
  for (size_t i = 0; i < params.size(); ++i) {
    auto state = opt_.state(i);
    ckpt.tensors.emplace_back(
        "opt.m." + params[i].name,
        Tensor::from_data(params[i].tensor.shape(), state.m));
    ckpt.tensors.emplace_back(
        "opt.v." + params[i].name,
        Tensor::from_data(params[i].tensor.shape(), state.v));
  }
  return ckpt;
}

void Trainer::save_state(const std::string& path) const {
  save_checkpoint(path, to_checkpoint());
}

void Trainer::restore(const Checkpoint& ckpt) {
  step_ = std::stoll(ckpt.require("train.step"));
  stage_index_ = std::stoll(ckpt.require("train.stage"));
  step_in_stage_ = std::stoll(ckpt.require("train.step_in_stage"));
  opt_.set_steps_taken(std::stoll(ckpt.require("train.opt_t")));
  rng_.deserialize(ckpt.require("train.rng"));
  const auto& params = model_.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor* m = ckpt.find_tensor("opt.m." + params[i].name);
    const Tensor* v = ckpt.find_tensor("opt.v." + params[i].name);
    if (!m || !v)
      throw std::runtime_error("trainer: checkpoint lacks optimizer state for " +
                               params[i].name);
    opt_.restore_state(i, m->to_vector(), v->to_vector());
  }
}

}  // namespace enclab
