#include "enclab/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "enclab/nn_ops.hpp"
#include "enclab/optim.hpp"
#include "enclab/packing.hpp"
#include "enclab/rng.hpp"

namespace enclab {

using namespace ops;

std::vector<Tensor> LogitModel::logits_batch(
    const std::vector<std::vector<int32_t>>& batch) {
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (const auto& ids : batch) out.push_back(logits(ids));
  return out;
}

EncoderLogitModel::EncoderLogitModel(const EncoderModel& model,
                                     int64_t variant_batch)
    : model_(model), variant_batch_(std::max<int64_t>(1, variant_batch)) {}

int64_t EncoderLogitModel::vocab() const { return model_.config().vocab_size; }

Tensor EncoderLogitModel::logits(const std::vector<int32_t>& ids) {
  PackedBatch row;
  row.mask_mode = PackMode::PackedBlockDiagonal;
  for (size_t i = 0; i < ids.size(); ++i) {
    row.token_ids.push_back(ids[i]);
    row.positions.push_back(static_cast<int32_t>(i));
    row.seq_ids.push_back(0);
    row.mlm_labels.push_back(kIgnoreLabel);
  }
  return model_.mlm_logits(model_.forward(row));
}

std::vector<Tensor> EncoderLogitModel::logits_batch(
    const std::vector<std::vector<int32_t>>& batch) {
  std::vector<Tensor> out;
  out.reserve(batch.size());
  size_t i = 0;
  while (i < batch.size()) {
    const size_t group_end =
        std::min(batch.size(), i + static_cast<size_t>(variant_batch_));
    PackedBatch packed;
    packed.mask_mode = PackMode::PackedBlockDiagonal;
    for (size_t s = i; s < group_end; ++s) {
      for (size_t p = 0; p < batch[s].size(); ++p) {
        packed.token_ids.push_back(batch[s][p]);
        packed.positions.push_back(static_cast<int32_t>(p));
        packed.seq_ids.push_back(static_cast<int32_t>(s - i));
        packed.mlm_labels.push_back(kIgnoreLabel);
      }
    }
    Tensor logits = model_.mlm_logits(model_.forward(packed));
    const int64_t v = logits.dim(1);
    int64_t offset = 0;
    for (size_t s = i; s < group_end; ++s) {
      const int64_t len = static_cast<int64_t>(batch[s].size());
      std::vector<float> rows(static_cast<size_t>(len * v));
      std::copy(logits.data() + offset * v, logits.data() + (offset + len) * v,
                rows.begin());
      out.push_back(Tensor::from_data({len, v}, std::move(rows)));
      offset += len;
    }
    i = group_end;
  }
  return out;
}

PpplResult pseudo_perplexity(LogitModel& model,
                             const std::vector<int32_t>& tokens,
                             int32_t mask_id) {
  if (tokens.empty())
    throw std::runtime_error("pseudo_perplexity: empty sequence");
  const int64_t n = static_cast<int64_t>(tokens.size());

  std::vector<std::vector<int32_t>> variants;
  variants.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    variants.push_back(tokens);
    variants.back()[static_cast<size_t>(i)] = mask_id;
  }
  std::vector<Tensor> logits = model.logits_batch(variants);

  PpplResult result;
  result.per_token_loss.resize(static_cast<size_t>(n));
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const Tensor& l = logits[static_cast<size_t>(i)];
    const int64_t v = l.dim(1);
    const float* row = l.data() + i * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, double(row[j]));
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(double(row[j]) - mx);
    const double li =
        std::log(z) + mx - double(row[tokens[static_cast<size_t>(i)]]);
    result.per_token_loss[static_cast<size_t>(i)] = li;
    total += li;
  }
  result.pppl = std::exp(total / double(n));
  return result;
}

std::vector<int64_t> make_doubling_bins(int64_t first, int64_t last) {
  std::vector<int64_t> edges;
  for (int64_t e = first; e <= last; e *= 2) edges.push_back(e);
  return edges;
}

PpplReport pppl_curve(LogitModel& model,
                      const std::vector<std::vector<int32_t>>& sample,
                      int32_t mask_id, const std::vector<int64_t>& bin_edges) {
  if (sample.empty()) throw std::runtime_error("pppl_curve: empty sample");
  if (!std::is_sorted(bin_edges.begin(), bin_edges.end()))
    throw std::invalid_argument("pppl_curve: bin edges must be sorted");

  PpplReport report;
  for (const auto& seq : sample) {
    PpplResult r = pseudo_perplexity(model, seq, mask_id);
    report.records.push_back(
        PpplRecord{static_cast<int64_t>(seq.size()), r.pppl});
  }

  int64_t lo = 0;
  for (int64_t hi : bin_edges) {
    PpplBin bin;
    bin.lo = lo;
    bin.hi = hi;
    double total = 0.0;
    for (const auto& rec : report.records) {
      if (rec.length > lo && rec.length <= hi) {
        total += rec.pppl;
        ++bin.count;
      }
    }
    if (bin.count > 0) bin.mean_pppl = total / double(bin.count);
    report.bins.push_back(bin);
    lo = hi;
  }
  return report;
}

std::string pppl_report_tsv(const PpplReport& report) {
  std::ostringstream os;
  os.precision(9);
  os << "length\tpppl\n";
  for (const auto& rec : report.records)
    os << rec.length << '\t' << rec.pppl << '\n';
  return os.str();
}

std::string pppl_curve_csv(const PpplReport& report) {
  std::ostringstream os;
  os.precision(9);
  os << "length_bin,mean_pppl,count\n";
  for (const auto& bin : report.bins)
    os << bin.hi << ',' << bin.mean_pppl << ',' << bin.count << '\n';
  return os.str();
}

RetrievalResult retrieval_eval(const std::vector<std::vector<float>>& queries,
                               const std::vector<std::vector<float>>& documents,
                               const std::vector<int64_t>& gold) {
  if (queries.size() != gold.size())
    throw std::invalid_argument("retrieval_eval: one gold document per query required");
  if (documents.empty()) throw std::invalid_argument("retrieval_eval: no documents");

  auto cosine = [](const std::vector<float>& u, const std::vector<float>& v) {
    if (u.size() != v.size())
      throw std::invalid_argument("retrieval_eval: dimension mismatch " +
                                  std::to_string(u.size()) + " vs " +
                                  std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
      dot += double(u[i]) * v[i];
      nu += double(u[i]) * u[i];
      nv += double(v[i]) * v[i];
    }
    const double denom = std::sqrt(nu) * std::sqrt(nv);
    return denom == 0.0 ? 0.0 : dot / denom;
  };

  double hits = 0.0, mrr = 0.0;
  for (size_t q = 0; q < queries.size(); ++q) {
    std::vector<double> sims(documents.size());
    for (size_t d = 0; d < documents.size(); ++d)
      sims[d] = cosine(queries[q], documents[d]);
    // rank of the gold document: documents strictly better, plus equal ones
    // with a lower index (deterministic tie-break)
    const int64_t g = gold[q];
    int64_t rank = 1;
    for (size_t d = 0; d < documents.size(); ++d) {
      if (static_cast<int64_t>(d) == g) continue;
      if (sims[d] > sims[static_cast<size_t>(g)] ||
          (sims[d] == sims[static_cast<size_t>(g)] &&
           static_cast<int64_t>(d) < g))
        ++rank;
    }
    if (rank == 1) hits += 1.0;
    mrr += 1.0 / double(rank);
  }
  RetrievalResult out;
  out.acc_at_1 = hits / double(queries.size());
  out.mrr = mrr / double(queries.size());
  return out;
}

namespace {

// Pooled representation as [1, d], differentiable. CLS pooling selects the
// first token via a one-hot mean.
Tensor pooled_representation(const Tensor& hidden, const PackedBatch& row,
                             PoolingKind pooling) {
  std::vector<uint8_t> mask;
  if (pooling == PoolingKind::Mean) {
    mask = row.valid();
  } else {
    mask.assign(static_cast<size_t>(hidden.dim(0)), 0);
    mask[0] = 1;
  }
  Tensor pooled = mean_pool(hidden, mask);
  return reshape(pooled, {1, pooled.numel()});
}

struct ClassifyRunOutcome {
  double metric = 0.0;
  int64_t evals = 0;
};

ClassifyRunOutcome classify_run(const EncoderModel& base, double lr,
                                int64_t batch_size, double weight_decay,
                                const std::vector<PackedBatch>& train_rows,
                                const std::vector<int32_t>& train_labels,
                                const std::vector<float>& train_targets,
                                const std::vector<PackedBatch>& dev_rows,
                                const std::vector<int32_t>& dev_labels,
                                const std::vector<float>& dev_targets,
                                const ClassifyOptions& options) {
  const bool regression = options.n_classes == 0;
  const int64_t n_out = regression ? 1 : options.n_classes;
  const int64_t d = base.config().d_model;

  EncoderModel model = base.clone();
  Rng init_rng(options.seed + 1);
  Tensor head_w = Tensor::zeros({d, n_out}, /*requires_grad=*/true);
  for (int64_t i = 0; i < head_w.numel(); ++i)
    head_w.data()[i] = static_cast<float>(init_rng.normal(0.0, 0.02));
  Tensor head_b = Tensor::zeros({n_out}, /*requires_grad=*/true);

  std::vector<ParamEntry> all_params = model.params();
  all_params.push_back(ParamEntry{"head.weight", head_w, true});
  all_params.push_back(ParamEntry{"head.bias", head_b, true});

  TrainPlan opt_plan;
  opt_plan.weight_decay = weight_decay;
  AdamOptimizer opt(opt_plan, all_params);
  Rng order_rng(options.seed);

  auto predict = [&](const PackedBatch& row) {
    Tensor hidden = model.forward(row);
    Tensor rep = pooled_representation(hidden, row, options.pooling);
    return add_bias(matmul(rep, head_w), head_b);  // [1, n_out]
  };

  auto dev_metric = [&]() {
    if (regression) {
      double se = 0.0;
      for (size_t i = 0; i < dev_rows.size(); ++i) {
        const double pred = predict(dev_rows[i]).data()[0];
        const double diff = pred - double(dev_targets[i]);
        se += diff * diff;
      }
      return -se / double(dev_rows.size());
    }
    int64_t correct = 0;
    for (size_t i = 0; i < dev_rows.size(); ++i) {
      Tensor out = predict(dev_rows[i]);
      int64_t argmax = 0;
      for (int64_t c = 1; c < n_out; ++c)
        if (out.data()[c] > out.data()[argmax]) argmax = c;
      if (argmax == dev_labels[i]) ++correct;
    }
    return double(correct) / double(dev_rows.size());
  };

  const int64_t n_train = static_cast<int64_t>(train_rows.size());
  const int64_t steps_per_epoch = (n_train + batch_size - 1) / batch_size;
  const int64_t eval_every =
      std::min<int64_t>(500, std::max<int64_t>(1, steps_per_epoch / 10));

  ClassifyRunOutcome outcome;
  double best = -std::numeric_limits<double>::infinity();
  int64_t since_best = 0;
  bool stop = false;
  int64_t global_step = 0;

  std::vector<int64_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < options.epochs && !stop; ++epoch) {
    for (int64_t i = n_train - 1; i > 0; --i) {
      const int64_t j = order_rng.uniform_int(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int64_t start = 0; start < n_train && !stop; start += batch_size) {
      const int64_t end = std::min(n_train, start + batch_size);
      GradTape tape;
      Tensor total;
      for (int64_t i = start; i < end; ++i) {
        const size_t idx = static_cast<size_t>(order[static_cast<size_t>(i)]);
        Tensor out = predict(train_rows[idx]);
        Tensor li;
        if (regression) {
          Tensor diff =
              sub(out, Tensor::from_data({1, 1}, {train_targets[idx]}));
          li = sum(mul(diff, diff));
        } else {
          li = cross_entropy(out, {train_labels[idx]}, -1, Reduction::Sum);
        }
        total = total.defined() ? add(total, li) : li;
      }
      Tensor loss = scale(total, 1.0f / static_cast<float>(end - start));
      tape.backward(loss);
      clip_grad_norm(all_params, opt_plan.clip_norm);
      opt.step(all_params, lr);
      ++global_step;

      if (global_step % eval_every == 0) {
        const double metric = dev_metric();
        ++outcome.evals;
        if (metric > best) {
          best = metric;
          since_best = 0;
        } else {
          ++since_best;
        }
        if (since_best > options.patience) stop = true;
      }
    }
  }
  if (outcome.evals == 0) {
    best = dev_metric();
    outcome.evals = 1;
  }
  outcome.metric = best;
  return outcome;
}

}  // namespace

ClassifyResult classify_finetune(const EncoderModel& base, const Tokenizer& tok,
                                 const std::vector<LabeledText>& train,
                                 const std::vector<LabeledText>& dev,
                                 const ClassifyGrid& grid,
                                 const ClassifyOptions& options) {
  if (train.empty() || dev.empty())
    throw std::runtime_error("classify_finetune: empty split");
  const bool regression = options.n_classes == 0;
  if (!regression) {
    if (options.n_classes < 2)
      throw std::runtime_error("classify_finetune: need >= 2 classes or regression targets");
    int32_t first = train.front().label;
    bool multi = false;
    for (const auto& ex : train)
      if (ex.label != first) {
        multi = true;
        break;
      }
    if (!multi)
      throw std::runtime_error("classify_finetune: training set has a single class");
  }
  if (grid.lrs.empty() || grid.batch_sizes.empty() || grid.weight_decays.empty())
    throw std::invalid_argument("classify_finetune: empty grid");

  auto encode_rows = [&](const std::vector<LabeledText>& split,
                         std::vector<PackedBatch>& rows,
                         std::vector<int32_t>& labels,
                         std::vector<float>& targets) {
    for (const auto& ex : split) {
      rows.push_back(
          single_sequence_row(tok.encode_document(ex.text, options.max_len)));
      labels.push_back(ex.label);
      targets.push_back(ex.target);
    }
  };
  std::vector<PackedBatch> train_rows, dev_rows;
  std::vector<int32_t> train_labels, dev_labels;
  std::vector<float> train_targets, dev_targets;
  encode_rows(train, train_rows, train_labels, train_targets);
  encode_rows(dev, dev_rows, dev_labels, dev_targets);

  ClassifyResult best;
  best.best_metric = -std::numeric_limits<double>::infinity();
  for (double lr : grid.lrs) {
    for (int64_t bs : grid.batch_sizes) {
      for (double wd : grid.weight_decays) {
        ClassifyRunOutcome run = classify_run(
            base, lr, bs, wd, train_rows, train_labels, train_targets,
            dev_rows, dev_labels, dev_targets, options);
        ++best.runs;
        best.evals += run.evals;
        if (run.metric > best.best_metric) {
          best.best_metric = run.metric;
          best.lr = lr;
          best.batch_size = bs;
          best.weight_decay = wd;
        }
      }
    }
  }
  return best;
}

}  // namespace enclab
