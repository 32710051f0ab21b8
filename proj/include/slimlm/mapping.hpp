#pragma once

// Word -> sub-vector assignment tables.
//
// A mapping assigns each of V words K pool indices in [0, M). Word w's
// embedding is the concatenation of pool rows table[w][0..K). Three
// construction schemes are provided:
//
//   balanced     shuffled copies of [0, M) over all K*V slots; usage counts
//                differ by at most one.
//   partitioned  position p draws only from P_p = [p*M/K, (p+1)*M/K), each
//                position balanced independently. Required by the DP softmax.
//   hashed       position-partitioned, index chosen by FNV-1a(seed, w, p).
//
// Tables are immutable once built.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "slimlm/random.hpp"

namespace slimlm {

enum class Scheme { Balanced, Partitioned, Hashed };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::Balanced: return "balanced";
    case Scheme::Partitioned: return "partitioned";
    case Scheme::Hashed: return "hashed";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view s) {
  if (s == "balanced") return Scheme::Balanced;
  if (s == "partitioned") return Scheme::Partitioned;
  if (s == "hashed") return Scheme::Hashed;
  throw std::invalid_argument("unknown mapping scheme '" + std::string(s) + "'");
}

using PoolIndex = std::uint32_t;

class SubVectorMapping {
 public:
  SubVectorMapping() = default;  // empty (V = K = M = 0); only a placeholder

  // Validates every invariant of `scheme` against the given table.
  static SubVectorMapping from_table(std::size_t vocab_size, std::size_t parts,
                                     std::size_t pool_size, Scheme scheme, std::uint64_t seed,
                                     std::vector<PoolIndex> table) {
    SubVectorMapping m(vocab_size, parts, pool_size, scheme, seed, std::move(table));
    m.validate();
    return m;
  }

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t parts() const noexcept { return parts_; }
  std::size_t pool_size() const noexcept { return pool_size_; }
  Scheme scheme() const noexcept { return scheme_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Number of pool rows per position partition; only meaningful when
  // is_partitioned().
  std::size_t partition_size() const noexcept { return parts_ ? pool_size_ / parts_ : 0; }
  bool is_partitioned() const noexcept { return scheme_ != Scheme::Balanced; }

  PoolIndex at(std::size_t word, std::size_t position) const {
    return table_[word * parts_ + position];
  }
  std::span<const PoolIndex> row(std::size_t word) const {
    return {table_.data() + word * parts_, parts_};
  }
  std::span<const PoolIndex> table() const noexcept { return table_; }

  friend bool operator==(const SubVectorMapping&, const SubVectorMapping&) = default;

 private:
  SubVectorMapping(std::size_t v, std::size_t k, std::size_t m, Scheme s, std::uint64_t seed,
                   std::vector<PoolIndex> table)
      : vocab_size_(v), parts_(k), pool_size_(m), scheme_(s), seed_(seed), table_(std::move(table)) {}

  void validate() const {
    if (vocab_size_ == 0 || parts_ == 0 || pool_size_ == 0)
      throw std::invalid_argument("mapping dimensions must be positive");
    if (pool_size_ > std::numeric_limits<PoolIndex>::max())
      throw std::invalid_argument("pool size exceeds index range");
    if (table_.size() != vocab_size_ * parts_)
      throw std::invalid_argument("mapping table has " + std::to_string(table_.size()) +
                                  " entries, expected " + std::to_string(vocab_size_ * parts_));
    for (PoolIndex idx : table_)
      if (idx >= pool_size_)
        throw std::invalid_argument("pool index " + std::to_string(idx) + " out of range (M=" +
                                    std::to_string(pool_size_) + ")");
    if (scheme_ == Scheme::Balanced) {
      std::vector<std::size_t> counts(pool_size_, 0);
      for (PoolIndex idx : table_) ++counts[idx];
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
      if (*hi - *lo > 1) throw std::invalid_argument("balanced mapping usage differs by more than one");
      return;
    }
    if (pool_size_ % parts_ != 0)
      throw std::invalid_argument("partitioned mapping requires K to divide M");
    const std::size_t psize = partition_size();
    for (std::size_t w = 0; w < vocab_size_; ++w)
      for (std::size_t p = 0; p < parts_; ++p)
        if (at(w, p) / psize != p)
          throw std::invalid_argument("pool index outside its position partition");
  }

  std::size_t vocab_size_ = 0;
  std::size_t parts_ = 0;
  std::size_t pool_size_ = 0;
  Scheme scheme_ = Scheme::Balanced;
  std::uint64_t seed_ = 0;
  std::vector<PoolIndex> table_;
};

namespace detail {

// `slots` indices over [0, pool) with per-index counts differing by at most
// one: floor(slots/pool) full copies plus a random subset of distinct
// indices for the remainder, then one Fisher-Yates pass over the whole list.
inline std::vector<PoolIndex> balanced_sequence(std::size_t slots, std::size_t pool,
                                                SplitMix64& rng) {
  std::vector<PoolIndex> list;
  list.reserve(slots);
  const std::size_t full = slots / pool;
  for (std::size_t c = 0; c < full; ++c)
    for (std::size_t i = 0; i < pool; ++i) list.push_back(static_cast<PoolIndex>(i));
  const std::size_t rest = slots - full * pool;
  if (rest > 0) {
    std::vector<PoolIndex> extra(pool);
    for (std::size_t i = 0; i < pool; ++i) extra[i] = static_cast<PoolIndex>(i);
    fisher_yates_shuffle(extra, rng);
    list.insert(list.end(), extra.begin(), extra.begin() + static_cast<std::ptrdiff_t>(rest));
  }
  fisher_yates_shuffle(list, rng);
  return list;
}

inline void require_partitionable(std::size_t k, std::size_t m) {
  if (m % k != 0)
    throw std::invalid_argument("K=" + std::to_string(k) + " does not divide M=" + std::to_string(m));
}

}  // namespace detail

inline SubVectorMapping build_balanced_mapping(std::size_t vocab_size, std::size_t parts,
                                               std::size_t pool_size, std::uint64_t seed) {
  if (vocab_size == 0 || parts == 0 || pool_size == 0)
    throw std::invalid_argument("mapping dimensions must be positive");
  if (pool_size > parts * vocab_size)
    throw std::invalid_argument("pool size M exceeds K*V slots");
  SplitMix64 rng(seed);
  auto table = detail::balanced_sequence(parts * vocab_size, pool_size, rng);
  return SubVectorMapping::from_table(vocab_size, parts, pool_size, Scheme::Balanced, seed,
                                      std::move(table));
}

inline SubVectorMapping build_partitioned_mapping(std::size_t vocab_size, std::size_t parts,
                                                  std::size_t pool_size, std::uint64_t seed) {
  if (vocab_size == 0 || parts == 0 || pool_size == 0)
    throw std::invalid_argument("mapping dimensions must be positive");
  detail::require_partitionable(parts, pool_size);
  const std::size_t psize = pool_size / parts;
  if (psize > vocab_size) throw std::invalid_argument("partition size M/K exceeds V");
  SplitMix64 rng(seed);
  std::vector<PoolIndex> table(vocab_size * parts);
  for (std::size_t p = 0; p < parts; ++p) {
    const auto column = detail::balanced_sequence(vocab_size, psize, rng);
    const auto offset = static_cast<PoolIndex>(p * psize);
    for (std::size_t w = 0; w < vocab_size; ++w) table[w * parts + p] = offset + column[w];
  }
  return SubVectorMapping::from_table(vocab_size, parts, pool_size, Scheme::Partitioned, seed,
                                      std::move(table));
}

// Pool index for (word, position) under the hashed scheme.
inline PoolIndex hashed_slot(std::uint64_t seed, std::size_t word, std::size_t position,
                             std::size_t partition_size) noexcept {
  return static_cast<PoolIndex>(position * partition_size +
                                slot_hash(seed, word, position) % partition_size);
}

inline SubVectorMapping build_hashed_mapping(std::size_t vocab_size, std::size_t parts,
                                             std::size_t pool_size, std::uint64_t seed) {
  if (vocab_size == 0 || parts == 0 || pool_size == 0)
    throw std::invalid_argument("mapping dimensions must be positive");
  detail::require_partitionable(parts, pool_size);
  const std::size_t psize = pool_size / parts;
  std::vector<PoolIndex> table(vocab_size * parts);
  for (std::size_t w = 0; w < vocab_size; ++w)
    for (std::size_t p = 0; p < parts; ++p) table[w * parts + p] = hashed_slot(seed, w, p, psize);
  return SubVectorMapping::from_table(vocab_size, parts, pool_size, Scheme::Hashed, seed,
                                      std::move(table));
}

inline SubVectorMapping build_mapping(Scheme scheme, std::size_t vocab_size, std::size_t parts,
                                      std::size_t pool_size, std::uint64_t seed) {
  switch (scheme) {
    case Scheme::Balanced: return build_balanced_mapping(vocab_size, parts, pool_size, seed);
    case Scheme::Partitioned: return build_partitioned_mapping(vocab_size, parts, pool_size, seed);
    case Scheme::Hashed: return build_hashed_mapping(vocab_size, parts, pool_size, seed);
  }
  throw std::invalid_argument("unknown scheme");
}

// One-to-one K=1 mapping word w -> row w; a plain dense embedding.
inline SubVectorMapping identity_mapping(std::size_t vocab_size) {
  std::vector<PoolIndex> table(vocab_size);
  for (std::size_t w = 0; w < vocab_size; ++w) table[w] = static_cast<PoolIndex>(w);
  return SubVectorMapping::from_table(vocab_size, 1, vocab_size, Scheme::Partitioned, 0,
                                      std::move(table));
}

inline std::vector<std::size_t> usage_histogram(const SubVectorMapping& m) {
  std::vector<std::size_t> counts(m.pool_size(), 0);
  for (PoolIndex idx : m.table()) ++counts[idx];
  return counts;
}

// True when every entry lies in its position partition (requires K | M).
inline bool has_partition_membership(const SubVectorMapping& m) {
  if (m.pool_size() % m.parts() != 0) return false;
  const std::size_t psize = m.partition_size();
  for (std::size_t w = 0; w < m.vocab_size(); ++w)
    for (std::size_t p = 0; p < m.parts(); ++p)
      if (m.at(w, p) / psize != p) return false;
  return true;
}

// Text format:
//   line 1:      "V K M scheme seed"
//   lines 2..V+1: K space-separated indices
inline void write_mapping(std::ostream& os, const SubVectorMapping& m) {
  os << m.vocab_size() << ' ' << m.parts() << ' ' << m.pool_size() << ' ' << to_string(m.scheme())
     << ' ' << m.seed() << '\n';
  for (std::size_t w = 0; w < m.vocab_size(); ++w) {
    const auto r = m.row(w);
    for (std::size_t p = 0; p < r.size(); ++p) {
      if (p) os << ' ';
      os << r[p];
    }
    os << '\n';
  }
}

inline SubVectorMapping read_mapping(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("mapping: missing header");
  std::istringstream header(line);
  std::size_t v = 0, k = 0, m = 0;
  std::string scheme;
  std::uint64_t seed = 0;
  std::string trailing;
  if (!(header >> v >> k >> m >> scheme >> seed) || (header >> trailing))
    throw std::runtime_error("mapping: malformed header '" + line + "'");
  if (v == 0 || k == 0 || m == 0) throw std::runtime_error("mapping: zero dimension in header");
  Scheme s;
  try {
    s = parse_scheme(scheme);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("mapping: ") + e.what());
  }
  std::vector<PoolIndex> table;
  table.reserve(v * k);
  for (std::size_t w = 0; w < v; ++w) {
    if (!std::getline(is, line))
      throw std::runtime_error("mapping: header declares " + std::to_string(v) + " rows, found " +
                               std::to_string(w));
    std::istringstream row(line);
    for (std::size_t p = 0; p < k; ++p) {
      std::uint64_t idx = 0;
      if (!(row >> idx)) throw std::runtime_error("mapping: short row " + std::to_string(w + 1));
      if (idx >= m)
        throw std::runtime_error("mapping: index " + std::to_string(idx) + " >= M on row " +
                                 std::to_string(w + 1));
      table.push_back(static_cast<PoolIndex>(idx));
    }
    if (row >> trailing) throw std::runtime_error("mapping: long row " + std::to_string(w + 1));
  }
  try {
    return SubVectorMapping::from_table(v, k, m, s, seed, std::move(table));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("mapping: ") + e.what());
  }
}

inline void save_mapping(const SubVectorMapping& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_mapping(os, m);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline SubVectorMapping load_mapping(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  auto m = read_mapping(is);
  std::string extra;
  while (std::getline(is, extra))
    if (!extra.empty()) throw std::runtime_error("mapping: trailing data after last row");
  return m;
}

}  // namespace slimlm
