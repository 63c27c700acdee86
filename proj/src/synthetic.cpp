#include "enclab/synthetic.hpp"

#include <fstream>
#include <stdexcept>

#include "enclab/rng.hpp"

namespace enclab {

std::vector<std::string> synthetic_topic_corpus(const SyntheticCorpusOptions& opt) {
  Rng rng(opt.seed);
  std::vector<std::string> docs;
  docs.reserve(static_cast<size_t>(opt.n_docs));
  const int64_t n_long1 = static_cast<int64_t>(opt.frac_over_1024 * double(opt.n_docs));
  const int64_t n_long2 = static_cast<int64_t>(opt.frac_over_2048 * double(opt.n_docs));
  for (int64_t d = 0; d < opt.n_docs; ++d) {
    const int64_t topic = rng.uniform_int(opt.n_topics);
    int64_t len;
    if (d < n_long2) {
      len = 2049 + rng.uniform_int(512);
    } else if (d < n_long2 + n_long1) {
      len = 1025 + rng.uniform_int(512);
    } else {
      len = opt.min_len + rng.uniform_int(opt.max_len - opt.min_len + 1);
    }
    std::string line = "t" + std::to_string(topic);
    for (int64_t i = 1; i < len; ++i) {
      const int64_t w = rng.uniform_int(opt.words_per_topic);
      line += " t" + std::to_string(topic) + "w" + std::to_string(w);
    }
    docs.push_back(std::move(line));
  }
  return docs;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& line : lines) out << line << '\n';
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

namespace {

std::string pair_text(const char* prefix, int64_t pattern, Rng& rng,
                      const SyntheticPairOptions& opt) {
  std::string text = std::string(prefix) + std::to_string(pattern);
  for (int64_t i = 0; i < opt.fillers_per_text; ++i)
    text += " f" + std::to_string(rng.uniform_int(opt.filler_vocab));
  return text;
}

}  // namespace

SyntheticPairData synthetic_pair_dataset(const SyntheticPairOptions& opt) {
  Rng rng(opt.seed);
  SyntheticPairData data;
  for (int64_t p = 0; p < opt.n_patterns; ++p) {
    for (int64_t i = 0; i < opt.pairs_per_pattern + opt.heldout_per_pattern; ++i) {
      PairExample ex;
      ex.task = opt.task;
      ex.instruction = opt.instruction;
      ex.query = pair_text("q", p, rng, opt);
      ex.positive = pair_text("d", p, rng, opt);
      for (int64_t h = 0; h < opt.hard_negatives; ++h) {
        const int64_t other =
            (p + 1 + rng.uniform_int(opt.n_patterns - 1)) % opt.n_patterns;
        ex.hard_negatives.push_back(pair_text("d", other, rng, opt));
      }
      if (i < opt.pairs_per_pattern)
        data.train.push_back(std::move(ex));
      else
        data.heldout.push_back(std::move(ex));
    }
  }
  return data;
}

SyntheticClassifyData synthetic_classify_dataset(
    const SyntheticClassifyOptions& opt) {
  Rng rng(opt.seed);
  SyntheticClassifyData data;
  for (int64_t c = 0; c < opt.n_classes; ++c) {
    for (int64_t i = 0; i < opt.n_per_class; ++i) {
      std::string text;
      for (int64_t w = 0; w < opt.words_per_text; ++w) {
        if (w) text += ' ';
        text += "c" + std::to_string(c) + "k" + std::to_string(rng.uniform_int(12));
      }
      data.texts.push_back(std::move(text));
      data.labels.push_back(static_cast<int32_t>(c));
    }
  }
  return data;
}

}  // namespace enclab
