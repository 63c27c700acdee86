#include "enclab/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "enclab/config.hpp"

namespace enclab {

namespace {

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

// Splits a UTF-8 string into code-point-sized chunks.
std::vector<std::string> split_chars(const std::string& word) {
  std::vector<std::string> chars;
  size_t i = 0;
  while (i < word.size()) {
    unsigned char c = static_cast<unsigned char>(word[i]);
    size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    len = std::min(len, word.size() - i);
    chars.push_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

const char* kSpecialNames[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

}  // namespace

void Tokenizer::index_tokens() {
  token_to_id_.clear();
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!id_to_token_[i].empty() && !special_[i])
      token_to_id_[id_to_token_[i]] = static_cast<int32_t>(i);
  }
}

Tokenizer Tokenizer::from_corpus(const std::vector<std::string>& docs,
                                 int64_t max_vocab, TokenizerMode mode) {
  if (mode == TokenizerMode::ExternalVocabFile)
    throw ConfigError("tokenizer: external-vocab-file mode requires from_vocab_file");
  if (max_vocab <= kReservedIds)
    throw ConfigError("tokenizer: max_vocab must exceed the reserved id range");

  std::map<std::string, int64_t> counts;
  for (const auto& doc : docs)
    for (const auto& w : split_ws(doc)) ++counts[w];

  Tokenizer tok;
  tok.mode_ = mode;
  tok.id_to_token_.assign(kReservedIds, "");
  tok.special_.assign(kReservedIds, 1);
  for (int32_t i = 0; i < 5; ++i) tok.id_to_token_[i] = kSpecialNames[i];

  std::map<std::string, bool> added;
  auto add_token = [&](const std::string& t) {
    if (static_cast<int64_t>(tok.id_to_token_.size()) >= max_vocab) return false;
    if (added.count(t)) return true;
    added[t] = true;
    tok.id_to_token_.push_back(t);
    tok.special_.push_back(0);
    return true;
  };

  if (mode == TokenizerMode::CharFallback) {
    std::map<std::string, bool> chars;
    for (const auto& [w, c] : counts)
      for (const auto& ch : split_chars(w)) chars[ch] = true;
    for (const auto& [ch, _] : chars)
      if (!add_token(ch)) break;
  }

  // Highest count first, alphabetical within a count, for a stable table.
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [w, c] : ranked) {
    if (!add_token(w)) break;
  }

  tok.content_start_ = kReservedIds;
  tok.index_tokens();
  return tok;
}

Tokenizer Tokenizer::from_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("tokenizer: cannot open vocab file " + path);

  Tokenizer tok;
  tok.mode_ = TokenizerMode::ExternalVocabFile;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tok.id_to_token_.push_back(line);
    tok.special_.push_back(0);
  }
  if (tok.id_to_token_.empty())
    throw ConfigError("tokenizer: vocab file " + path + " is empty");

  auto find_special = [&](const char* name) {
    for (size_t i = 0; i < tok.id_to_token_.size() &&
                       i < static_cast<size_t>(kReservedIds); ++i) {
      if (tok.id_to_token_[i] == name) {
        tok.special_[i] = 1;
        return static_cast<int32_t>(i);
      }
    }
    throw ConfigError(std::string("tokenizer: vocab file ") + path +
                      " lacks special token " + name + " below id 100");
  };
  tok.pad_id_ = find_special("[PAD]");
  tok.unk_id_ = find_special("[UNK]");
  tok.cls_id_ = find_special("[CLS]");
  tok.sep_id_ = find_special("[SEP]");
  tok.mask_id_ = find_special("[MASK]");

  int32_t first_content = 0;
  while (first_content < tok.vocab_size() && tok.special_[first_content])
    ++first_content;
  tok.content_start_ = first_content;
  tok.index_tokens();
  return tok;
}

bool Tokenizer::is_special(int32_t id) const {
  return id >= 0 && id < static_cast<int32_t>(special_.size()) &&
         special_[id] != 0;
}

std::vector<int32_t> Tokenizer::encode(const std::string& text) const {
  std::vector<int32_t> ids;
  for (const auto& w : split_ws(text)) {
    auto it = token_to_id_.find(w);
    if (it != token_to_id_.end()) {
      ids.push_back(it->second);
      continue;
    }
    if (mode_ == TokenizerMode::CharFallback) {
      for (const auto& ch : split_chars(w)) {
        auto cit = token_to_id_.find(ch);
        ids.push_back(cit != token_to_id_.end() ? cit->second : unk_id_);
      }
    } else {
      ids.push_back(unk_id_);
    }
  }
  return ids;
}

std::vector<int32_t> Tokenizer::encode_document(const std::string& text,
                                                int64_t max_len) const {
  std::vector<int32_t> content = encode(text);
  if (max_len > 0) {
    if (max_len < 2)
      throw ConfigError("tokenizer: max_len must be >= 2 to hold CLS and SEP");
    if (static_cast<int64_t>(content.size()) > max_len - 2)
      content.resize(static_cast<size_t>(max_len - 2));
  }
  std::vector<int32_t> ids;
  ids.reserve(content.size() + 2);
  ids.push_back(cls_id_);
  ids.insert(ids.end(), content.begin(), content.end());
  ids.push_back(sep_id_);
  return ids;
}

std::string Tokenizer::decode(const std::vector<int32_t>& ids) const {
  std::string out;
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab_size())
      throw std::out_of_range("tokenizer: id " + std::to_string(id) +
                              " outside vocabulary of " +
                              std::to_string(vocab_size()));
    if (is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += id_to_token_[static_cast<size_t>(id)];
  }
  return out;
}

int32_t Tokenizer::random_content_id(Rng& rng) const {
  if (content_count() <= 0)
    throw std::runtime_error("tokenizer: vocabulary has no content tokens");
  for (int tries = 0; tries < 100; ++tries) {
    int32_t id = content_start_ +
                 static_cast<int32_t>(rng.uniform_int(content_count()));
    if (!is_special(id) && !id_to_token_[static_cast<size_t>(id)].empty())
      return id;
  }
  return unk_id_;
}

}  // namespace enclab
