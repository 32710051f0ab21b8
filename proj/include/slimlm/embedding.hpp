#pragma once

// Compressed input embedding: a word's N-vector is the concatenation of the
// K pool rows its mapping names. Gradients scatter-add back into those rows,
// so every word sharing a sub-vector is updated together.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "slimlm/mapping.hpp"
#include "slimlm/tensor.hpp"

namespace slimlm {

using WordId = std::uint32_t;

// M x d matrix of shared sub-vectors; row i is a_i.
struct EmbeddingPool {
  RowMatrix data;

  EmbeddingPool() = default;
  EmbeddingPool(std::size_t pool_size, std::size_t sub_dim)
      : data(RowMatrix::Zero(static_cast<Eigen::Index>(pool_size), static_cast<Eigen::Index>(sub_dim))) {}

  std::size_t pool_size() const noexcept { return static_cast<std::size_t>(data.rows()); }
  std::size_t sub_dim() const noexcept { return static_cast<std::size_t>(data.cols()); }
};

// Accumulated dLoss/da_i, same shape as the pool it belongs to.
struct PoolGradient {
  RowMatrix data;

  PoolGradient() = default;
  explicit PoolGradient(const EmbeddingPool& pool)
      : data(RowMatrix::Zero(pool.data.rows(), pool.data.cols())) {}

  void zero() { data.setZero(); }
};

inline void check_pool(const EmbeddingPool& pool, const SubVectorMapping& mapping) {
  if (pool.pool_size() != mapping.pool_size())
    throw std::invalid_argument("pool has " + std::to_string(pool.pool_size()) +
                                " rows but mapping expects M=" + std::to_string(mapping.pool_size()));
  if (pool.sub_dim() == 0) throw std::invalid_argument("pool sub-vector width is zero");
}

inline void check_word(const SubVectorMapping& mapping, std::size_t word) {
  if (word >= mapping.vocab_size())
    throw std::out_of_range("word id " + std::to_string(word) + " >= V=" +
                            std::to_string(mapping.vocab_size()));
}

// Writes the concatenated embedding of `word` into `out` (length K*d).
template <typename Out>
void embed_into(const EmbeddingPool& pool, const SubVectorMapping& mapping, std::size_t word,
                Out&& out) {
  const auto d = static_cast<Eigen::Index>(pool.sub_dim());
  const auto r = mapping.row(word);
  for (std::size_t p = 0; p < r.size(); ++p)
    out.segment(static_cast<Eigen::Index>(p) * d, d) = pool.data.row(r[p]).transpose();
}

inline Vector embed_forward(const EmbeddingPool& pool, const SubVectorMapping& mapping,
                            std::size_t word) {
  check_pool(pool, mapping);
  check_word(mapping, word);
  Vector out(static_cast<Eigen::Index>(mapping.parts() * pool.sub_dim()));
  embed_into(pool, mapping, word, out);
  return out;
}

// grad row table[word][p] += upstream slice p.
template <typename Upstream>
void embed_backward(PoolGradient& grad, const SubVectorMapping& mapping, std::size_t word,
                    const Upstream& upstream) {
  check_word(mapping, word);
  const auto d = grad.data.cols();
  if (static_cast<std::size_t>(upstream.size()) != mapping.parts() * static_cast<std::size_t>(d))
    throw std::invalid_argument("upstream gradient length " + std::to_string(upstream.size()) +
                                " != N=" + std::to_string(mapping.parts() * static_cast<std::size_t>(d)));
  const auto r = mapping.row(word);
  for (std::size_t p = 0; p < r.size(); ++p)
    grad.data.row(r[p]) += upstream.segment(static_cast<Eigen::Index>(p) * d, d).transpose();
}

// Input embedding layer: fixed mapping plus its trainable pool.
struct SlimEmbedding {
  SubVectorMapping mapping;
  EmbeddingPool pool;

  std::size_t width() const noexcept { return mapping.parts() * pool.sub_dim(); }
};

struct ParamCount {
  std::size_t compressed = 0;
  std::size_t uncompressed = 0;
  double ratio = 0.0;
};

// Mapping-table storage is not counted.
inline ParamCount param_count(std::size_t vocab_size, std::size_t width, std::size_t parts,
                              std::size_t pool_size) {
  if (parts == 0 || width % parts != 0)
    throw std::invalid_argument("K=" + std::to_string(parts) + " does not divide N=" +
                                std::to_string(width));
  ParamCount pc;
  pc.compressed = pool_size * (width / parts);
  pc.uncompressed = vocab_size * width;
  pc.ratio = static_cast<double>(pool_size) / static_cast<double>(parts * vocab_size);
  return pc;
}

}  // namespace slimlm
