#pragma once

// Compressed output layer.
//
// Word w's output embedding is e_w = [a_{w,0}, ..., a_{w,K-1}] with a_{w,p}
// drawn from partition P_p of the pool. Splitting the context h into K
// slices h_p gives z_w = sum_p h_p . a_{w,p}. Because h_p only meets rows of
// P_p, every partial product h_p . a is needed exactly once:
//
//   step 1  u = [P_0 h_0; ...; P_{K-1} h_{K-1}]     M*d multiply-adds
//   step 2  z_w = sum_p u[table[w][p]]             V*(K-1) additions
//
// versus V*H multiply-adds for a dense layer. Backward runs the same two
// steps in reverse: G_a = sum of grad_z over the slots naming a, then
// grad_h_p = P_p^T G_p and grad P_p += G_p h_p^T.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimlm/embedding.hpp"
#include "slimlm/random.hpp"
#include "slimlm/tensor.hpp"

namespace slimlm {

struct FlopCounter {
  std::uint64_t macs = 0;
  std::uint64_t adds = 0;
};

struct OutputLayer {
  SubVectorMapping mapping;
  EmbeddingPool pool;

  std::size_t vocab_size() const noexcept { return mapping.vocab_size(); }
  std::size_t parts() const noexcept { return mapping.parts(); }
  std::size_t sub_dim() const noexcept { return pool.sub_dim(); }
  std::size_t hidden_dim() const noexcept { return mapping.parts() * pool.sub_dim(); }
};

inline void check_output_layer(const OutputLayer& layer) {
  if (!layer.mapping.is_partitioned())
    throw std::invalid_argument("output layer requires a position-partitioned mapping");
  check_pool(layer.pool, layer.mapping);
}

// Builds a zero-initialized layer for hidden width H; K must divide H.
inline OutputLayer make_output_layer(SubVectorMapping mapping, std::size_t hidden_dim) {
  if (hidden_dim % mapping.parts() != 0)
    throw std::invalid_argument("K=" + std::to_string(mapping.parts()) + " does not divide H=" +
                                std::to_string(hidden_dim));
  const std::size_t m = mapping.pool_size();
  const std::size_t d = hidden_dim / mapping.parts();
  OutputLayer layer{std::move(mapping), EmbeddingPool(m, d)};
  check_output_layer(layer);
  return layer;
}

namespace detail {

inline void check_hidden(const OutputLayer& layer, Eigen::Index rows) {
  if (static_cast<std::size_t>(rows) != layer.hidden_dim())
    throw std::invalid_argument("hidden vector length " + std::to_string(rows) + " != H=" +
                                std::to_string(layer.hidden_dim()));
}

}  // namespace detail

// Direct per-word gather and dot product. Reference path.
inline Vector logits_naive(const OutputLayer& layer, const Vector& h, FlopCounter* flops = nullptr) {
  check_pool(layer.pool, layer.mapping);
  detail::check_hidden(layer, h.size());
  const std::size_t V = layer.vocab_size();
  const std::size_t K = layer.parts();
  const auto d = static_cast<Eigen::Index>(layer.sub_dim());
  Vector z(static_cast<Eigen::Index>(V));
  for (std::size_t w = 0; w < V; ++w) {
    double acc = 0.0;
    for (std::size_t p = 0; p < K; ++p) {
      const auto row = layer.pool.data.row(layer.mapping.at(w, p));
      const auto slice = h.segment(static_cast<Eigen::Index>(p) * d, d);
      for (Eigen::Index j = 0; j < d; ++j) acc += slice[j] * row[j];
    }
    z[static_cast<Eigen::Index>(w)] = acc;
  }
  if (flops) flops->macs += static_cast<std::uint64_t>(V) * K * static_cast<std::uint64_t>(d);
  return z;
}

// Step 1 for a batch of contexts (H x B): the M x B table of partial products.
inline Matrix partial_products(const OutputLayer& layer, const Matrix& hidden,
                               FlopCounter* flops = nullptr) {
  const std::size_t K = layer.parts();
  const auto d = static_cast<Eigen::Index>(layer.sub_dim());
  const auto psize = static_cast<Eigen::Index>(layer.mapping.partition_size());
  Matrix u(static_cast<Eigen::Index>(layer.mapping.pool_size()), hidden.cols());
  for (std::size_t p = 0; p < K; ++p) {
    const auto off = static_cast<Eigen::Index>(p);
    u.middleRows(off * psize, psize).noalias() =
        layer.pool.data.middleRows(off * psize, psize) * hidden.middleRows(off * d, d);
    if (flops) flops->macs += static_cast<std::uint64_t>(psize * d * hidden.cols());
  }
  return u;
}

// Step 2: z_w = sum_p u[table[w][p]], per column.
inline Matrix sum_partials(const OutputLayer& layer, const Matrix& u, FlopCounter* flops = nullptr) {
  const std::size_t V = layer.vocab_size();
  const std::size_t K = layer.parts();
  const std::span<const PoolIndex> table = layer.mapping.table();
  Matrix z(static_cast<Eigen::Index>(V), u.cols());
  for (Eigen::Index b = 0; b < u.cols(); ++b) {
    const double* ub = u.col(b).data();
    double* zb = z.col(b).data();
    const PoolIndex* t = table.data();
    for (std::size_t w = 0; w < V; ++w, t += K) {
      double acc = ub[t[0]];
      for (std::size_t p = 1; p < K; ++p) acc += ub[t[p]];
      zb[w] = acc;
    }
  }
  if (flops) flops->adds += static_cast<std::uint64_t>(V) * (K - 1) * static_cast<std::uint64_t>(u.cols());
  return z;
}

// Two-step DP logits for a batch of contexts (H x B) -> V x B.
inline Matrix logits_dp_batch(const OutputLayer& layer, const Matrix& hidden,
                              FlopCounter* flops = nullptr) {
  check_output_layer(layer);
  detail::check_hidden(layer, hidden.rows());
  return sum_partials(layer, partial_products(layer, hidden, flops), flops);
}

inline Vector logits_dp(const OutputLayer& layer, const Vector& h, FlopCounter* flops = nullptr) {
  check_output_layer(layer);
  detail::check_hidden(layer, h.size());
  Matrix hm = h;
  return logits_dp_batch(layer, hm, flops).col(0);
}

struct XentResult {
  double loss = 0.0;
  Vector grad;  // p - onehot(target)
};

// Stable log-sum-exp of a column.
template <typename Col>
double log_sum_exp(const Col& z) {
  const double mx = z.maxCoeff();
  return mx + std::log((z.array() - mx).exp().sum());
}

inline XentResult softmax_xent(const Vector& z, std::size_t target) {
  if (target >= static_cast<std::size_t>(z.size()))
    throw std::out_of_range("target " + std::to_string(target) + " >= V=" + std::to_string(z.size()));
  const double mx = z.maxCoeff();
  Vector e = (z.array() - mx).exp();
  const double sum = e.sum();
  XentResult r;
  r.loss = std::log(sum) + mx - z[static_cast<Eigen::Index>(target)];
  r.grad = e / sum;
  r.grad[static_cast<Eigen::Index>(target)] -= 1.0;
  return r;
}

inline Vector softmax(const Vector& z) {
  Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

// Reverse of logits_dp for a batch. Accumulates into `grad_pool` and
// returns dLoss/dhidden (H x B).
inline Matrix output_backward_batch(const OutputLayer& layer, const Matrix& hidden,
                                    const Matrix& grad_z, PoolGradient& grad_pool) {
  check_output_layer(layer);
  detail::check_hidden(layer, hidden.rows());
  const std::size_t V = layer.vocab_size();
  const std::size_t K = layer.parts();
  if (static_cast<std::size_t>(grad_z.rows()) != V || grad_z.cols() != hidden.cols())
    throw std::invalid_argument("grad_z shape does not match V x batch");
  if (grad_pool.data.rows() != layer.pool.data.rows() || grad_pool.data.cols() != layer.pool.data.cols())
    throw std::invalid_argument("pool gradient shape mismatch");
  const std::span<const PoolIndex> table = layer.mapping.table();

  Matrix g = Matrix::Zero(static_cast<Eigen::Index>(layer.mapping.pool_size()), grad_z.cols());
  for (Eigen::Index b = 0; b < grad_z.cols(); ++b) {
    const double* gz = grad_z.col(b).data();
    double* gb = g.col(b).data();
    const PoolIndex* t = table.data();
    for (std::size_t w = 0; w < V; ++w, t += K)
      for (std::size_t p = 0; p < K; ++p) gb[t[p]] += gz[w];
  }

  const auto d = static_cast<Eigen::Index>(layer.sub_dim());
  const auto psize = static_cast<Eigen::Index>(layer.mapping.partition_size());
  Matrix grad_h(hidden.rows(), hidden.cols());
  for (std::size_t p = 0; p < K; ++p) {
    const auto off = static_cast<Eigen::Index>(p);
    const auto gp = g.middleRows(off * psize, psize);
    grad_h.middleRows(off * d, d).noalias() =
        layer.pool.data.middleRows(off * psize, psize).transpose() * gp;
    grad_pool.data.middleRows(off * psize, psize).noalias() +=
        gp * hidden.middleRows(off * d, d).transpose();
  }
  return grad_h;
}

struct OutputGrad {
  Vector grad_h;
  PoolGradient grad_pool;
};

inline OutputGrad output_backward(const OutputLayer& layer, const Vector& h, const Vector& grad_z) {
  OutputGrad out{Vector(), PoolGradient(layer.pool)};
  Matrix hm = h;
  Matrix gm = grad_z;
  out.grad_h = output_backward_batch(layer, hm, gm, out.grad_pool).col(0);
  return out;
}

// Smoothed unigram noise distribution with Vose alias sampling.
class NoiseTable {
 public:
  NoiseTable() = default;

  std::size_t size() const noexcept { return probs_.size(); }
  bool empty() const noexcept { return probs_.empty(); }
  double prob(std::size_t w) const { return probs_[w]; }
  std::span<const double> probs() const noexcept { return probs_; }

  std::size_t sample(SplitMix64& rng) const {
    const auto i = static_cast<std::size_t>(rng.below(probs_.size()));
    return rng.uniform() < accept_[i] ? i : alias_[i];
  }

  friend NoiseTable build_noise_table(std::span<const double> counts, double power);

 private:
  std::vector<double> probs_;
  std::vector<double> accept_;
  std::vector<std::size_t> alias_;
};

inline NoiseTable build_noise_table(std::span<const double> counts, double power = 0.75) {
  if (counts.empty()) throw std::invalid_argument("noise table needs a non-empty vocabulary");
  NoiseTable t;
  const std::size_t n = counts.size();
  t.probs_.resize(n);
  bool any_positive = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(counts[i] >= 0.0)) throw std::invalid_argument("negative or NaN unigram count");
    if (counts[i] > 0.0) any_positive = true;
  }
  if (!any_positive) throw std::invalid_argument("all unigram counts are zero");
  for (std::size_t i = 0; i < n; ++i)
    t.probs_[i] = counts[i] > 0.0 ? std::pow(counts[i], power) : (power == 0.0 ? 1.0 : 0.0);
  const double total = std::accumulate(t.probs_.begin(), t.probs_.end(), 0.0);
  for (double& p : t.probs_) p /= total;

  t.accept_.assign(n, 1.0);
  t.alias_.resize(n);
  std::vector<double> scaled(n);
  std::vector<std::size_t> small, large;
  for (std::size_t i = 0; i < n; ++i) {
    t.alias_[i] = i;
    scaled[i] = t.probs_[i] * static_cast<double>(n);
    (scaled[i] < 1.0 ? small : large).push_back(i);
  }
  while (!small.empty() && !large.empty()) {
    const std::size_t s = small.back();
    small.pop_back();
    const std::size_t l = large.back();
    t.accept_[s] = scaled[s];
    t.alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (std::size_t i : large) t.accept_[i] = 1.0;
  for (std::size_t i : small) t.accept_[i] = 1.0;
  return t;
}

inline NoiseTable build_noise_table(const std::vector<double>& counts, double power = 0.75) {
  return build_noise_table(std::span<const double>(counts), power);
}

// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) noexcept {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct NceResult {
  double loss = 0.0;
  Vector grad_h;
  std::vector<std::size_t> samples;
};

// Score of one word, z_w = sum_p h_p . a_{w,p}, by gather.
template <typename H>
double word_score(const OutputLayer& layer, const H& h, std::size_t w) {
  const auto d = static_cast<Eigen::Index>(layer.sub_dim());
  double s = 0.0;
  const auto r = layer.mapping.row(w);
  for (std::size_t p = 0; p < r.size(); ++p)
    s += layer.pool.data.row(r[p]).dot(h.segment(static_cast<Eigen::Index>(p) * d, d).transpose());
  return s;
}

// NCE with a fixed partition function Z (log Z = `log_z`, 0 by default).
// With k noise draws x_i and delta(w) = z_w - log Z - log(k q(w)):
//   loss = -[log sig(delta(target)) + sum_i log sig(-delta(x_i))]
// Only the k+1 touched words' pool rows receive gradient; it is accumulated
// into `grad_pool` (scaled by `scale`, as is grad_h).
template <typename H>
NceResult nce_loss(const OutputLayer& layer, const H& h, std::size_t target, const NoiseTable& noise,
                   std::size_t num_noise, SplitMix64& rng, PoolGradient& grad_pool,
                   double scale = 1.0, double log_z = 0.0) {
  if (target >= layer.vocab_size())
    throw std::out_of_range("target " + std::to_string(target) + " >= V=" +
                            std::to_string(layer.vocab_size()));
  if (noise.empty()) throw std::invalid_argument("empty noise table");
  if (noise.size() != layer.vocab_size()) throw std::invalid_argument("noise table size != V");
  if (num_noise == 0) throw std::invalid_argument("NCE needs at least one noise sample");
  detail::check_hidden(layer, h.size());

  const double offset = std::log(static_cast<double>(num_noise)) + log_z;
  const auto d = static_cast<Eigen::Index>(layer.sub_dim());
  NceResult r;
  r.grad_h = Vector::Zero(h.size());
  r.samples.reserve(num_noise);

  auto touch = [&](std::size_t w, double coeff) {
    const auto row = layer.mapping.row(w);
    for (std::size_t p = 0; p < row.size(); ++p) {
      const auto off = static_cast<Eigen::Index>(p) * d;
      r.grad_h.segment(off, d) += coeff * layer.pool.data.row(row[p]).transpose();
      grad_pool.data.row(row[p]) += (scale * coeff) * h.segment(off, d).transpose();
    }
  };

  {
    const double delta = word_score(layer, h, target) - (offset + std::log(noise.prob(target)));
    r.loss -= log_sigmoid(delta);
    touch(target, sigmoid(delta) - 1.0);
  }
  for (std::size_t i = 0; i < num_noise; ++i) {
    const std::size_t x = noise.sample(rng);
    r.samples.push_back(x);
    const double delta = word_score(layer, h, x) - (offset + std::log(noise.prob(x)));
    r.loss -= log_sigmoid(-delta);
    touch(x, sigmoid(delta));
  }
  r.grad_h *= scale;
  return r;
}

}  // namespace slimlm
