#pragma once

// LSTM language model with compressed input and output embeddings.
//
//   word ids -> SlimEmbedding -> LstmStack (dropout on non-recurrent edges)
//            -> OutputLayer (DP logits) -> softmax / NCE

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "slimlm/config.hpp"
#include "slimlm/corpus.hpp"
#include "slimlm/embedding.hpp"
#include "slimlm/lstm.hpp"
#include "slimlm/mapping.hpp"
#include "slimlm/random.hpp"
#include "slimlm/softmax.hpp"

namespace slimlm {

// How one embedding layer is shared. `dense` means one private row per word
// (K = 1, M = V, identity table).
struct SharingConfig {
  bool dense = true;
  Scheme scheme = Scheme::Balanced;
  std::size_t parts = 1;
  std::size_t pool = 0;

  friend bool operator==(const SharingConfig&, const SharingConfig&) = default;
};

enum class LossKind { FullSoftmax, Nce };

// Fixed partition function assumed by NCE training: Z = V or Z = 1.
enum class NceNorm { Vocab, One };

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 128;
  std::size_t vocab = 0;
  SharingConfig input{};
  SharingConfig output{};
  double dropout = 0.0;        // between layers and before the output layer
  double dropout_embed = 0.0;  // embedding -> first LSTM layer
  LossKind loss = LossKind::FullSoftmax;
  std::size_t nce_k = 20;
  NceNorm nce_norm = NceNorm::Vocab;
  std::uint64_t seed = 1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, p) : std::to_string(v);
}

inline std::string sharing_name(const SharingConfig& s) {
  return s.dense ? "dense" : std::string(to_string(s.scheme));
}

inline SharingConfig parse_sharing(const std::string& scheme, std::size_t parts, std::size_t pool) {
  SharingConfig s;
  s.dense = scheme == "dense";
  if (!s.dense) s.scheme = parse_scheme(scheme);
  s.parts = s.dense ? 1 : parts;
  s.pool = pool;
  return s;
}

inline void validate(const ModelConfig& c) {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (c.layers == 0) bad("layers must be positive");
  if (c.hidden == 0) bad("hidden width must be positive");
  if (c.vocab < 2) bad("vocabulary must hold at least <eos> and <unk>");
  if (c.dropout < 0.0 || c.dropout >= 1.0 || c.dropout_embed < 0.0 || c.dropout_embed >= 1.0)
    bad("dropout probabilities must be in [0, 1)");
  if (c.loss == LossKind::Nce && c.nce_k == 0) bad("nce_k must be positive");
  for (const auto* s : {&c.input, &c.output}) {
    const char* which = s == &c.input ? "input" : "output";
    if (s->dense) continue;
    if (s->parts == 0 || c.hidden % s->parts != 0)
      bad(std::string("K_") + which + "=" + std::to_string(s->parts) + " must divide hidden=" +
          std::to_string(c.hidden));
    if (s->pool == 0) bad(std::string("M_") + which + " must be positive");
    if (s->scheme != Scheme::Balanced && s->pool % s->parts != 0)
      bad(std::string("K_") + which + " must divide M_" + which);
  }
  if (!c.output.dense && c.output.scheme == Scheme::Balanced)
    bad("output layer needs a partitioned or hashed mapping");
}

struct Model {
  ModelConfig config;
  SlimEmbedding input;
  LstmStack lstm;
  OutputLayer output;
};

namespace detail {

inline SubVectorMapping make_mapping(const SharingConfig& s, std::size_t vocab, std::uint64_t seed) {
  if (s.dense) return identity_mapping(vocab);
  return build_mapping(s.scheme, vocab, s.parts, s.pool, seed);
}

template <typename Block>
void fill_uniform(Block&& block, SplitMix64& rng, double lo, double hi) {
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = rng.uniform(lo, hi);
}

}  // namespace detail

// Visits every trainable block in a fixed order: input pool, per layer
// (weight, bias), output pool.
template <typename M, typename Fn>
void for_each_block(M& model, Fn&& fn) {
  fn(model.input.pool.data);
  for (auto& layer : model.lstm.layers) {
    fn(layer.weight);
    fn(layer.bias);
  }
  fn(model.output.pool.data);
}

inline constexpr double kInitRange = 0.05;

// Mappings come from sub-seeds "map-in" / "map-out"; weights are drawn
// U(-0.05, 0.05) from "init" in for_each_block order, row-major.
inline Model init_model(const ModelConfig& cfg) {
  validate(cfg);
  const std::size_t n = cfg.hidden;
  Model m{cfg,
          SlimEmbedding{detail::make_mapping(cfg.input, cfg.vocab, derive_seed(cfg.seed, "map-in")), {}},
          {},
          OutputLayer{detail::make_mapping(cfg.output, cfg.vocab, derive_seed(cfg.seed, "map-out")), {}}};
  m.input.pool = EmbeddingPool(m.input.mapping.pool_size(), n / m.input.mapping.parts());
  for (std::size_t l = 0; l < cfg.layers; ++l) m.lstm.layers.emplace_back(n);
  m.output.pool = EmbeddingPool(m.output.mapping.pool_size(), n / m.output.mapping.parts());
  check_output_layer(m.output);

  SplitMix64 rng(derive_seed(cfg.seed, "init"));
  for_each_block(m, [&](auto& block) { detail::fill_uniform(block, rng, -kInitRange, kInitRange); });
  return m;
}

inline std::size_t trainable_params(const Model& m) {
  std::size_t total = 0;
  for_each_block(m, [&](const auto& block) { total += static_cast<std::size_t>(block.size()); });
  return total;
}

struct ModelGrads {
  PoolGradient input;
  std::vector<LstmGrads> lstm;
  PoolGradient output;

  explicit ModelGrads(const Model& m) : input(m.input.pool), output(m.output.pool) {
    for (const auto& l : m.lstm.layers) lstm.emplace_back(l.width());
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(input.data);
    for (auto& l : lstm) {
      fn(l.weight);
      fn(l.bias);
    }
    fn(output.data);
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    fn(input.data);
    for (const auto& l : lstm) {
      fn(l.weight);
      fn(l.bias);
    }
    fn(output.data);
  }

  void zero() {
    for_each_block([](auto& b) { b.setZero(); });
  }

  double norm() {
    double sq = 0.0;
    for_each_block([&](auto& b) { sq += b.squaredNorm(); });
    return std::sqrt(sq);
  }

  void scale(double s) {
    for_each_block([&](auto& b) { b *= s; });
  }
};

// How a window's output loss is computed during training.
struct NceSampler {
  const NoiseTable* noise = nullptr;
  std::size_t num_noise = 0;
  SplitMix64* rng = nullptr;
  double log_z = 0.0;
};

inline double nce_log_z(const ModelConfig& c) {
  return c.nce_norm == NceNorm::Vocab ? std::log(static_cast<double>(c.vocab)) : 0.0;
}

struct WindowResult {
  double loss_sum = 0.0;  // summed negative log-likelihood (or NCE loss)
  std::size_t tokens = 0;

  double mean() const { return tokens ? loss_sum / static_cast<double>(tokens) : 0.0; }
};

namespace detail {

inline std::vector<Matrix> embed_window(const Model& model, const Window& w) {
  const auto n = static_cast<Eigen::Index>(model.config.hidden);
  std::vector<Matrix> xs;
  xs.reserve(w.steps);
  for (std::size_t t = 0; t < w.steps; ++t) {
    Matrix x(n, static_cast<Eigen::Index>(w.batch));
    for (std::size_t b = 0; b < w.batch; ++b) {
      const WordId id = w.input_at(t, b);
      check_word(model.input.mapping, id);
      embed_into(model.input.pool, model.input.mapping, id, x.col(static_cast<Eigen::Index>(b)));
    }
    xs.push_back(std::move(x));
  }
  return xs;
}

inline Matrix stack_columns(const std::vector<Matrix>& top, Eigen::Index rows, std::size_t batch) {
  const auto B = static_cast<Eigen::Index>(batch);
  Matrix h(rows, static_cast<Eigen::Index>(top.size()) * B);
  for (std::size_t t = 0; t < top.size(); ++t) h.middleCols(static_cast<Eigen::Index>(t) * B, B) = top[t];
  return h;
}

}  // namespace detail

// Forward over one window, carrying `state`. When `grads` is given the
// gradient of the mean window loss is accumulated into it. With `nce`
// the NCE objective replaces the full softmax.
inline WindowResult run_window(const Model& model, const Window& w, LstmState& state,
                               const StackMasks& masks = {}, ModelGrads* grads = nullptr,
                               const NceSampler* nce = nullptr) {
  const auto n = static_cast<Eigen::Index>(model.config.hidden);
  const std::size_t tokens = w.steps * w.batch;
  WindowResult res;
  res.tokens = tokens;
  if (tokens == 0) return res;

  const std::vector<Matrix> xs = detail::embed_window(model, w);
  StackForward fwd = stack_forward(model.lstm, xs, state, masks);
  state = fwd.state;
  const Matrix hidden = detail::stack_columns(fwd.top, n, w.batch);
  const double grad_scale = 1.0 / static_cast<double>(tokens);

  Matrix grad_hidden;
  if (nce != nullptr) {
    if (grads == nullptr) throw std::invalid_argument("NCE is a training objective");
    grad_hidden.resize(n, hidden.cols());
    for (Eigen::Index j = 0; j < hidden.cols(); ++j) {
      const auto col = hidden.col(j);
      NceResult r = nce_loss(model.output, col, w.target[static_cast<std::size_t>(j)], *nce->noise,
                             nce->num_noise, *nce->rng, grads->output, grad_scale, nce->log_z);
      res.loss_sum += r.loss;
      grad_hidden.col(j) = r.grad_h;
    }
  } else {
    Matrix z = logits_dp_batch(model.output, hidden);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const WordId target = w.target[static_cast<std::size_t>(j)];
      if (target >= model.config.vocab) throw std::out_of_range("target id out of range");
      auto col = z.col(j);
      const double mx = col.maxCoeff();
      const double zt = col[target];
      col.array() = (col.array() - mx).exp();
      const double sum = col.sum();
      res.loss_sum += std::log(sum) + mx - zt;
      if (grads != nullptr) {
        col *= grad_scale / sum;
        col[target] -= grad_scale;
      }
    }
    if (grads != nullptr) grad_hidden = output_backward_batch(model.output, hidden, z, grads->output);
  }
  if (!std::isfinite(res.loss_sum)) throw std::runtime_error("non-finite loss");
  if (grads == nullptr) return res;

  const auto B = static_cast<Eigen::Index>(w.batch);
  std::vector<Matrix> grad_top(w.steps);
  for (std::size_t t = 0; t < w.steps; ++t)
    grad_top[t] = grad_hidden.middleCols(static_cast<Eigen::Index>(t) * B, B);
  StackBackward back = stack_backward(model.lstm, fwd.cache, grad_top);
  for (std::size_t l = 0; l < back.grads.size(); ++l) {
    grads->lstm[l].weight += back.grads[l].weight;
    grads->lstm[l].bias += back.grads[l].bias;
  }
  for (std::size_t t = 0; t < w.steps; ++t)
    for (std::size_t b = 0; b < w.batch; ++b)
      embed_backward(grads->input, model.input.mapping, w.input_at(t, b),
                     back.grad_inputs[t].col(static_cast<Eigen::Index>(b)));
  return res;
}

// exp of the mean negative log-probability.
inline double perplexity(double nll_sum, std::size_t tokens) {
  if (tokens == 0) throw std::invalid_argument("perplexity of an empty stream");
  return std::exp(nll_sum / static_cast<double>(tokens));
}

// Scores stream[i+1] given stream[0..i] for every i with the exact softmax,
// dropout off, state carried from the start of the stream.
inline double evaluate_ppl(const Model& model, const TokenStream& stream, std::size_t chunk = 64) {
  if (stream.size() < 2) throw std::invalid_argument("evaluation stream needs at least two tokens");
  LstmState state = LstmState::zeros(model.config.layers, model.config.hidden, 1);
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const Window& w : batchify(stream, 1, chunk)) {
    const WindowResult r = run_window(model, w, state);
    nll += r.loss_sum;
    tokens += r.tokens;
  }
  return perplexity(nll, tokens);
}

}  // namespace slimlm
