#pragma once

// Word-level corpus handling: vocabulary, id streams, and lane batching.
// Text is one sentence per line; tokens are separated by ASCII whitespace.
// `<eos>` (id 0) ends every line and `<unk>` (id 1) absorbs rare or unseen
// words; both ids are always reserved.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slimlm/embedding.hpp"
#include "slimlm/random.hpp"

namespace slimlm {

inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

inline bool is_ascii_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

template <typename Fn>
void for_each_token(std::string_view line, Fn&& fn) {
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_ascii_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_ascii_space(line[i])) ++i;
    if (i > start) fn(line.substr(start, i - start));
  }
}

class Vocabulary {
 public:
  static constexpr WordId kEos = 0;
  static constexpr WordId kUnk = 1;

  Vocabulary() {
    add(std::string(kEosToken), 0);
    add(std::string(kUnkToken), 0);
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(WordId id) const { return tokens_.at(id); }
  std::uint64_t count(WordId id) const { return counts_.at(id); }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  WordId id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

  // Line i is "token count" for id i.
  void write(std::ostream& os) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << ' ' << counts_[i] << '\n';
  }

  static Vocabulary read(std::istream& is) {
    Vocabulary v;
    v.tokens_.clear();
    v.counts_.clear();
    v.index_.clear();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string tok;
      std::uint64_t count = 0;
      std::string extra;
      if (!(ss >> tok >> count) || (ss >> extra))
        throw std::runtime_error("vocab line " + std::to_string(lineno) + ": expected 'token count'");
      if (v.index_.count(tok))
        throw std::runtime_error("vocab line " + std::to_string(lineno) + ": duplicate token " + tok);
      v.add(tok, count);
    }
    if (v.size() < 2 || v.tokens_[kEos] != kEosToken || v.tokens_[kUnk] != kUnkToken)
      throw std::runtime_error("vocab: ids 0 and 1 must be <eos> and <unk>");
    return v;
  }

  std::string serialize() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  // FNV-1a over the serialized form.
  std::uint64_t hash() const { return fnv1a_string(serialize()); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

  friend Vocabulary build_vocab(const std::vector<std::string>& lines, std::uint64_t min_count,
                                std::size_t max_size);

 private:
  void add(std::string tok, std::uint64_t count) {
    index_.emplace(tok, static_cast<WordId>(tokens_.size()));
    tokens_.push_back(std::move(tok));
    counts_.push_back(count);
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, WordId> index_;
};

// Regular words are ranked by descending count, ties by first occurrence.
// Words below `min_count` or past `max_size` (0 = no limit) fold into <unk>.
inline Vocabulary build_vocab(const std::vector<std::string>& lines, std::uint64_t min_count = 1,
                              std::size_t max_size = 0) {
  struct Entry {
    std::string token;
    std::uint64_t count;
    std::size_t first;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, std::size_t> seen;
  std::uint64_t unk = 0;
  std::size_t total = 0;
  for (const auto& line : lines) {
    for_each_token(line, [&](std::string_view tok) {
      ++total;
      if (tok == kEosToken) return;
      if (tok == kUnkToken) {
        ++unk;
        return;
      }
      auto [it, inserted] = seen.emplace(std::string(tok), entries.size());
      if (inserted)
        entries.push_back({std::string(tok), 1, entries.size()});
      else
        ++entries[it->second].count;
    });
  }
  if (lines.empty() || total == 0) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");

  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.count != b.count ? a.count > b.count : a.first < b.first;
  });
  Vocabulary v;
  v.counts_[Vocabulary::kEos] = lines.size();
  std::size_t kept = 0;
  for (auto& e : entries) {
    if (e.count >= min_count && (max_size == 0 || kept < max_size)) {
      v.add(std::move(e.token), e.count);
      ++kept;
    } else {
      unk += e.count;
    }
  }
  v.counts_[Vocabulary::kUnk] = unk;
  return v;
}

using TokenStream = std::vector<WordId>;

inline TokenStream encode(const std::vector<std::string>& lines, const Vocabulary& vocab) {
  TokenStream out;
  for (const auto& line : lines) {
    for_each_token(line, [&](std::string_view tok) { out.push_back(vocab.id(tok)); });
    out.push_back(Vocabulary::kEos);
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

inline void save_vocab(const Vocabulary& v, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  v.write(os);
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open vocabulary '" + path + "'");
  return Vocabulary::read(is);
}

// One BPTT window: `steps` x `batch` ids, element (t, b) at t*batch + b.
struct Window {
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<WordId> input;
  std::vector<WordId> target;

  WordId input_at(std::size_t t, std::size_t b) const { return input[t * batch + b]; }
  WordId target_at(std::size_t t, std::size_t b) const { return target[t * batch + b]; }
};

// Splits the stream into `batch` contiguous lanes (tail dropped) and tiles
// them with windows of up to `bptt` steps; targets are the lane successors.
inline std::vector<Window> batchify(const TokenStream& stream, std::size_t batch, std::size_t bptt) {
  if (batch == 0 || bptt == 0) throw std::invalid_argument("batch and bptt must be positive");
  if (stream.size() < 2 * batch)
    throw std::invalid_argument("stream of " + std::to_string(stream.size()) +
                                " tokens is too short for " + std::to_string(batch) + " lanes");
  const std::size_t lane = stream.size() / batch;
  std::vector<Window> windows;
  for (std::size_t start = 0; start + 1 < lane; start += bptt) {
    Window w;
    w.steps = std::min(bptt, lane - 1 - start);
    w.batch = batch;
    w.input.resize(w.steps * batch);
    w.target.resize(w.steps * batch);
    for (std::size_t t = 0; t < w.steps; ++t)
      for (std::size_t b = 0; b < batch; ++b) {
        w.input[t * batch + b] = stream[b * lane + start + t];
        w.target[t * batch + b] = stream[b * lane + start + t + 1];
      }
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace slimlm
