#include "enclab/contrastive.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "enclab/nn_ops.hpp"

namespace enclab {

using namespace ops;

void ContrastiveConfig::validate() const {
  if (temperature <= 0) throw ConfigError("contrastive: temperature must be > 0");
  if (alpha < 0) throw ConfigError("contrastive: alpha must be >= 0");
  if (steps < 0) throw ConfigError("contrastive: steps must be >= 0");
  if (batch_size < 2) throw ConfigError("contrastive: batch_size must be >= 2");
  if (lr <= 0) throw ConfigError("contrastive: lr must be > 0");
}

std::vector<PairExample> load_pair_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("pair file: cannot open " + path);
  std::vector<PairExample> pairs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() < 4)
      throw ConfigError("pair file: line " + std::to_string(lineno) +
                        " has " + std::to_string(fields.size()) +
                        " fields, expected at least 4");
    PairExample ex;
    ex.task = fields[0];
    ex.instruction = fields[1];
    ex.query = fields[2];
    ex.positive = fields[3];
    for (size_t i = 4; i < fields.size(); ++i)
      if (!fields[i].empty()) ex.hard_negatives.push_back(fields[i]);
    if (ex.query.empty() || ex.positive.empty())
      throw ConfigError("pair file: line " + std::to_string(lineno) +
                        " has an empty query or positive");
    pairs.push_back(std::move(ex));
  }
  return pairs;
}

void save_pair_file(const std::string& path,
                    const std::vector<PairExample>& pairs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("pair file: cannot write " + path);
  for (const auto& ex : pairs) {
    out << ex.task << '\t' << ex.instruction << '\t' << ex.query << '\t'
        << ex.positive;
    for (const auto& neg : ex.hard_negatives) out << '\t' << neg;
    out << '\n';
  }
}

double cosine_sim(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_sim: dimension mismatch " +
                                std::to_string(u.size()) + " vs " +
                                std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    dot += double(u[i]) * v[i];
    nu += double(u[i]) * u[i];
    nv += double(v[i]) * v[i];
  }
  if (nu == 0.0 || nv == 0.0)
    throw std::invalid_argument("cosine_sim: zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::vector<double> dataset_mix_probs(const std::vector<int64_t>& sizes,
                                      double alpha) {
  if (sizes.empty()) throw std::invalid_argument("dataset_mix_probs: no sizes");
  std::vector<double> probs(sizes.size());
  double total = 0.0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] <= 0)
      throw std::invalid_argument("dataset_mix_probs: size must be positive");
    probs[i] = std::pow(double(sizes[i]), alpha);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return probs;
}

Tensor info_nce(const Tensor& sim_pos, const Tensor& sim_negs,
                double temperature) {
  if (temperature <= 0)
    throw std::invalid_argument("info_nce: temperature must be > 0");
  if (sim_pos.numel() != 1)
    throw std::invalid_argument("info_nce: sim_pos must be a scalar");
  if (sim_negs.numel() < 1)
    throw std::invalid_argument("info_nce: empty negatives");
  // One softmax row with the positive in column 0: the loss is exactly
  // cross-entropy against class 0.
  Tensor pos_row = reshape(sim_pos, {1, 1});
  Tensor neg_row = reshape(sim_negs, {1, sim_negs.numel()});
  Tensor logits = scale(concat_cols(pos_row, neg_row),
                        static_cast<float>(1.0 / temperature));
  return cross_entropy(logits, {0}, -1);
}

double info_nce_value(double sim_pos, const std::vector<double>& sim_negs,
                      double temperature) {
  if (temperature <= 0)
    throw std::invalid_argument("info_nce: temperature must be > 0");
  if (sim_negs.empty()) throw std::invalid_argument("info_nce: empty negatives");
  double mx = sim_pos / temperature;
  for (double s : sim_negs) mx = std::max(mx, s / temperature);
  double z = std::exp(sim_pos / temperature - mx);
  for (double s : sim_negs) z += std::exp(s / temperature - mx);
  return std::log(z) - (sim_pos / temperature - mx);
}

ContrastiveBatch build_batch(const std::vector<PairExample>& pool,
                             int64_t batch_size, Rng& rng) {
  if (static_cast<int64_t>(pool.size()) < batch_size)
    throw std::runtime_error("build_batch: pool of " +
                             std::to_string(pool.size()) +
                             " is smaller than batch size " +
                             std::to_string(batch_size));
  for (const auto& ex : pool)
    if (ex.task != pool.front().task)
      throw std::runtime_error("build_batch: mixed task tags '" +
                               pool.front().task + "' and '" + ex.task + "'");
  std::vector<int64_t> indices(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) indices[i] = static_cast<int64_t>(i);
  for (int64_t i = 0; i < batch_size; ++i) {
    const int64_t j =
        i + rng.uniform_int(static_cast<int64_t>(pool.size()) - i);
    std::swap(indices[static_cast<size_t>(i)], indices[static_cast<size_t>(j)]);
  }
  ContrastiveBatch batch;
  batch.indices.assign(indices.begin(), indices.begin() + batch_size);
  return batch;
}

Tensor embed(const EncoderModel& model, const Tokenizer& tok,
             const std::string& text, const std::string& instruction) {
  std::vector<int32_t> content = tok.encode(text);
  if (content.empty())
    throw std::runtime_error("embed: text is empty after tokenization");

  std::vector<int32_t> ids;
  ids.push_back(tok.cls_id());
  if (!instruction.empty()) {
    std::vector<int32_t> instr = tok.encode(instruction);
    ids.insert(ids.end(), instr.begin(), instr.end());
    ids.push_back(tok.sep_id());  // marker between instruction and query
  }
  ids.insert(ids.end(), content.begin(), content.end());
  ids.push_back(tok.sep_id());

  const int64_t max_pos = model.config().max_positions;
  if (model.config().positional == Positional::AbsoluteLearned &&
      static_cast<int64_t>(ids.size()) > max_pos)
    ids.resize(static_cast<size_t>(max_pos));

  PackedBatch row;
  row.mask_mode = PackMode::Padded;
  for (size_t i = 0; i < ids.size(); ++i) {
    row.token_ids.push_back(ids[i]);
    row.positions.push_back(static_cast<int32_t>(i));
    row.seq_ids.push_back(0);
    row.mlm_labels.push_back(kIgnoreLabel);
  }

  Tensor hidden = model.forward(row);
  Tensor pooled = mean_pool(hidden, row.valid());
  Tensor unit = l2_normalize_rows(reshape(pooled, {1, pooled.numel()}));
  return reshape(unit, {pooled.numel()});
}

FinetuneResult finetune_contrastive(
    EncoderModel& model, const Tokenizer& tok,
    const std::vector<std::vector<PairExample>>& datasets,
    const ContrastiveConfig& cfg) {
  cfg.validate();
  if (datasets.empty())
    throw std::runtime_error("finetune_contrastive: no datasets");
  std::vector<int64_t> sizes;
  for (const auto& d : datasets) {
    if (d.empty())
      throw std::runtime_error("finetune_contrastive: empty dataset");
    sizes.push_back(static_cast<int64_t>(d.size()));
  }
  const std::vector<double> probs = dataset_mix_probs(sizes, cfg.alpha);

  TrainPlan opt_plan;  // pretraining optimizer defaults
  opt_plan.seed = cfg.seed;
  AdamOptimizer opt(opt_plan, model.params());
  Rng rng(cfg.seed);

  FinetuneResult result;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const int64_t pick = rng.categorical(probs);
    result.dataset_picks.push_back(pick);
    const auto& pool = datasets[static_cast<size_t>(pick)];
    const int64_t b =
        std::min<int64_t>(cfg.batch_size, static_cast<int64_t>(pool.size()));
    ContrastiveBatch batch = build_batch(pool, b, rng);

    GradTape tape;
    std::vector<Tensor> q_emb, p_emb;
    std::vector<std::vector<Tensor>> h_emb(batch.indices.size());
    for (size_t i = 0; i < batch.indices.size(); ++i) {
      const PairExample& ex = pool[static_cast<size_t>(batch.indices[i])];
      q_emb.push_back(embed(model, tok, ex.query, ex.instruction));
      p_emb.push_back(embed(model, tok, ex.positive));
      for (const auto& neg : ex.hard_negatives)
        h_emb[i].push_back(embed(model, tok, neg));
    }

    auto dot = [](const Tensor& a, const Tensor& c) { return sum(mul(a, c)); };

    Tensor total;
    for (size_t i = 0; i < q_emb.size(); ++i) {
      Tensor sim_pos = dot(q_emb[i], p_emb[i]);
      // negatives: in-batch positives of the other examples, then the
      // query's own hard negatives
      Tensor negs;
      for (size_t j = 0; j < p_emb.size(); ++j) {
        if (j == i) continue;
        Tensor s = reshape(dot(q_emb[i], p_emb[j]), {1, 1});
        negs = negs.defined() ? concat_cols(negs, s) : s;
      }
      for (const auto& h : h_emb[i]) {
        Tensor s = reshape(dot(q_emb[i], h), {1, 1});
        negs = negs.defined() ? concat_cols(negs, s) : s;
      }
      Tensor loss_i = info_nce(sim_pos, reshape(negs, {negs.numel()}),
                               cfg.temperature);
      total = total.defined() ? add(total, loss_i) : loss_i;
    }
    Tensor loss = scale(total, 1.0f / static_cast<float>(q_emb.size()));
    tape.backward(loss);
    clip_grad_norm(model.params(), opt_plan.clip_norm);
    opt.step(model.params(), cfg.lr);
    result.loss_trace.push_back(loss.item());
  }
  return result;
}

}  // namespace enclab
