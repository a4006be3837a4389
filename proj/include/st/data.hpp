#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "st/error.hpp"
#include "st/st_core.hpp"

namespace st {

// Lowercase, split on whitespace, and emit every ASCII punctuation character
// as its own token.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

class Vocab {
 public:
  static constexpr long kPad = 0;
  static constexpr long kUnk = 1;

  Vocab() {
    add("<pad>");
    add("<unk>");
  }

  // Ids by descending frequency from 2, ties broken lexicographically.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_freq = 1) {
    if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::size_t> freq;
    for (const auto& sent : corpus)
      for (const auto& t : sent) ++freq[t];
    std::vector<std::pair<std::string, std::size_t>> items;
    for (auto& [tok, n] : freq)
      if (n >= min_freq) items.emplace_back(tok, n);
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (auto& [tok, n] : items) v.add(tok);
    return v;
  }

  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < 2) throw CorruptionError("vocabulary is missing reserved entries");
    Vocab v;
    for (std::size_t i = 2; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  long id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(long id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
  }

  std::vector<long> encode(const std::vector<std::string>& toks) const {
    std::vector<long> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<long>& ids) const {
    std::vector<std::string> out;
    for (long i : ids) out.push_back(token(i));
    return out;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& tok) {
    index_.emplace(tok, static_cast<long>(tokens_.size()));
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, long> index_;
};

// Label names to class ids. Grows in first-seen order until frozen.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)), frozen_(true) {}

  int id(const std::string& name) {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it != names_.end()) return static_cast<int>(it - names_.begin());
    if (frozen_) throw DataError("unknown label '" + name + "'");
    names_.push_back(name);
    return static_cast<int>(names_.size() - 1);
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  bool frozen_ = false;
};

struct RawExample {
  std::string label;
  std::vector<std::string> text_a;
  std::optional<std::vector<std::string>> text_b;
};

struct Example {
  std::vector<long> text_a;
  std::optional<std::vector<long>> text_b;
  int label = 0;
};

enum class TaskKind { single, pair };

inline TaskKind parse_task(const std::string& s) {
  if (s == "single") return TaskKind::single;
  if (s == "pair") return TaskKind::pair;
  throw ConfigError("unknown task kind '" + s + "'");
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    parts.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline std::vector<std::string> truncate(std::vector<std::string> toks, std::size_t max_len) {
  if (max_len && toks.size() > max_len) toks.resize(max_len);
  return toks;
}

inline std::vector<RawExample> load_tsv(const std::filesystem::path& path, std::size_t fields,
                                        std::size_t max_len) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<RawExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    auto parts = split_tabs(line);
    if (parts.size() != fields)
      throw DataError(where + ": expected " + std::to_string(fields) + " tab-separated fields, got " +
                      std::to_string(parts.size()));
    RawExample ex;
    ex.label = parts[0];
    if (ex.label.empty()) throw DataError(where + ": empty label");
    ex.text_a = truncate(tokenize(parts[1]), max_len);
    if (ex.text_a.empty()) throw DataError(where + ": empty sentence");
    if (fields == 3) {
      ex.text_b = truncate(tokenize(parts[2]), max_len);
      if (ex.text_b->empty()) throw DataError(where + ": empty second sentence");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

// `label<TAB>text` per line.
inline std::vector<RawExample> load_single(const std::filesystem::path& path,
                                           std::size_t max_len = 64) {
  return detail::load_tsv(path, 2, max_len);
}

// `label<TAB>sentence1<TAB>sentence2` per line.
inline std::vector<RawExample> load_pairs(const std::filesystem::path& path,
                                          std::size_t max_len = 64) {
  return detail::load_tsv(path, 3, max_len);
}

inline std::vector<RawExample> load_examples(const std::filesystem::path& path, TaskKind task,
                                             std::size_t max_len = 64) {
  return task == TaskKind::single ? load_single(path, max_len) : load_pairs(path, max_len);
}

inline std::vector<std::vector<std::string>> corpus_of(const std::vector<RawExample>& raw) {
  std::vector<std::vector<std::string>> c;
  for (const auto& r : raw) {
    c.push_back(r.text_a);
    if (r.text_b) c.push_back(*r.text_b);
  }
  return c;
}

inline std::vector<Example> numericalize(const std::vector<RawExample>& raw, const Vocab& vocab,
                                         LabelSet& labels) {
  std::vector<Example> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    Example e;
    e.text_a = vocab.encode(r.text_a);
    if (r.text_b) e.text_b = vocab.encode(*r.text_b);
    e.label = labels.id(r.label);
    out.push_back(std::move(e));
  }
  return out;
}

struct SentenceBatch {
  std::size_t max_len = 0;
  std::vector<long> ids;  // batch x max_len, PAD-filled
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::optional<std::vector<long>> ids_b;
  std::optional<std::vector<std::size_t>> lengths_b;
  std::size_t max_len_b = 0;

  std::size_t size() const { return labels.size(); }

  // First block, then (for pairs) the second block, PAD stripped.
  TokenBlock tokens() const {
    TokenBlock block;
    auto add_block = [&](const std::vector<long>& ids, const std::vector<std::size_t>& lens,
                         std::size_t width) {
      for (std::size_t i = 0; i < lens.size(); ++i)
        block.add(std::vector<long>(ids.begin() + i * width, ids.begin() + i * width + lens[i]));
    };
    add_block(ids, lengths, max_len);
    if (ids_b) add_block(*ids_b, *lengths_b, max_len_b);
    return block;
  }
};

inline SentenceBatch make_batch(const std::vector<Example>& examples,
                                const std::vector<std::size_t>& members) {
  SentenceBatch b;
  const bool pair = !members.empty() && examples[members.front()].text_b.has_value();
  for (auto i : members) {
    b.max_len = std::max(b.max_len, examples[i].text_a.size());
    if (pair) b.max_len_b = std::max(b.max_len_b, examples[i].text_b->size());
  }
  b.ids.assign(members.size() * b.max_len, Vocab::kPad);
  if (pair) {
    b.ids_b.emplace(members.size() * b.max_len_b, Vocab::kPad);
    b.lengths_b.emplace();
  }
  for (std::size_t r = 0; r < members.size(); ++r) {
    const auto& ex = examples[members[r]];
    std::copy(ex.text_a.begin(), ex.text_a.end(), b.ids.begin() + r * b.max_len);
    b.lengths.push_back(ex.text_a.size());
    b.labels.push_back(ex.label);
    if (pair) {
      if (!ex.text_b) throw DataError("pair batch mixes in a single-sentence example");
      std::copy(ex.text_b->begin(), ex.text_b->end(), b.ids_b->begin() + r * b.max_len_b);
      b.lengths_b->push_back(ex.text_b->size());
    }
  }
  return b;
}

// Deterministic batching; with a seed the order is a seeded shuffle, without
// one the dataset order is kept. The final partial batch is emitted.
inline std::vector<SentenceBatch> batch_iter(const std::vector<Example>& examples,
                                             std::size_t batch_size,
                                             std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<SentenceBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(examples, std::vector<std::size_t>(order.begin() + start,
                                                                order.begin() + end)));
  }
  return out;
}

}  // namespace st
