#pragma once

// Training loop, optimizers, and checkpoints.
//
// Checkpoint layout (all integers u64 little-endian, reals IEEE-754 f64
// little-endian):
//
//   "SLIMLM1\n"
//   L n V K_in M_in K_out M_out flags
//   input mapping, output mapping           (mapping text format)
//   input pool, per layer (weight, bias), output pool   (row-major)
//   optimizer: lr, has_accumulators, [accumulators in parameter order]
//   vocab_hash, epoch, best_valid_ppl, config_length, config text
//
// flags: bit 0 dense input, bit 1 dense output, bit 2 NCE, bit 3 Adagrad.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "slimlm/config.hpp"
#include "slimlm/corpus.hpp"
#include "slimlm/model.hpp"

namespace slimlm {

enum class Optimizer { Sgd, Adagrad };

struct TrainConfig {
  double lr = 20.0;
  double lr_decay = 0.5;
  Optimizer optimizer = Optimizer::Sgd;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t batch = 20;
  std::size_t bptt = 35;
  std::size_t max_epochs = 15;
  std::size_t eval_interval = 1;  // epochs between validation passes
  bool log_time = false;          // wall time in the CSV log (otherwise 0)

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr double kAdagradEpsilon = 1e-10;

inline void validate(const TrainConfig& c) {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(c.lr >= 0.0)) bad("lr must be non-negative");
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) bad("lr_decay must be in (0, 1]");
  if (c.batch == 0 || c.bptt == 0) bad("batch and bptt must be positive");
  if (c.eval_interval == 0) bad("eval_interval must be positive");
}

struct OptimizerState {
  Optimizer kind = Optimizer::Sgd;
  double lr = 1.0;
  std::optional<ModelGrads> accum;  // Adagrad sum of squared gradients
};

inline OptimizerState make_optimizer(const Model& m, const TrainConfig& cfg) {
  OptimizerState s;
  s.kind = cfg.optimizer;
  s.lr = cfg.lr;
  if (s.kind == Optimizer::Adagrad) {
    s.accum.emplace(m);
    s.accum->zero();
  }
  return s;
}

// Contiguous views over every trainable block, in checkpoint order.
template <typename M>
auto param_spans(M& m) {
  using T = std::conditional_t<std::is_const_v<M>, const double, double>;
  std::vector<std::span<T>> out;
  for_each_block(m, [&](auto& b) { out.emplace_back(b.data(), static_cast<std::size_t>(b.size())); });
  return out;
}

template <typename G>
auto grad_spans(G& g) {
  using T = std::conditional_t<std::is_const_v<G>, const double, double>;
  std::vector<std::span<T>> out;
  g.for_each_block([&](auto& b) { out.emplace_back(b.data(), static_cast<std::size_t>(b.size())); });
  return out;
}

// Rescales to `clip_norm` when the global norm exceeds it. Returns the
// norm before clipping.
inline double clip_gradients(ModelGrads& g, double clip_norm) {
  const double norm = g.norm();
  if (clip_norm > 0.0 && std::isfinite(clip_norm) && norm > clip_norm) g.scale(clip_norm / norm);
  return norm;
}

inline void apply_update(Model& m, ModelGrads& g, OptimizerState& opt) {
  auto params = param_spans(m);
  auto grads = grad_spans(g);
  if (opt.kind == Optimizer::Sgd) {
    for (std::size_t b = 0; b < params.size(); ++b)
      for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= opt.lr * grads[b][i];
    return;
  }
  auto acc = grad_spans(*opt.accum);
  for (std::size_t b = 0; b < params.size(); ++b)
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double gi = grads[b][i];
      acc[b][i] += gi * gi;
      params[b][i] -= opt.lr * gi / (std::sqrt(acc[b][i]) + kAdagradEpsilon);
    }
}

// Per-run mutable training context.
struct TrainState {
  LstmState lstm;
  SplitMix64 dropout_rng;
  SplitMix64 noise_rng;
  NoiseTable noise;
};

inline TrainState make_train_state(const Model& m, const TrainConfig& cfg,
                                   const std::vector<std::uint64_t>& unigram_counts = {}) {
  TrainState s{LstmState::zeros(m.config.layers, m.config.hidden, cfg.batch),
               SplitMix64(derive_seed(m.config.seed, "dropout")),
               SplitMix64(derive_seed(m.config.seed, "noise")),
               {}};
  if (m.config.loss == LossKind::Nce) {
    if (unigram_counts.size() != m.config.vocab)
      throw std::invalid_argument("NCE training needs unigram counts for every word");
    std::vector<double> counts(unigram_counts.begin(), unigram_counts.end());
    s.noise = build_noise_table(counts, 0.75);
  }
  return s;
}

struct StepStats {
  double loss = 0.0;       // mean over window tokens
  double grad_norm = 0.0;  // before clipping
};

// One forward/backward/update over a window. The returned loss is the
// pre-update mean loss.
inline StepStats train_step(Model& model, const Window& window, OptimizerState& opt,
                            TrainState& state, const TrainConfig& cfg) {
  ModelGrads grads(model);
  const StackMasks masks =
      make_stack_masks(model.config.layers, model.config.hidden, window.batch, window.steps,
                       model.config.dropout_embed, model.config.dropout, state.dropout_rng);
  NceSampler sampler{&state.noise, model.config.nce_k, &state.noise_rng, nce_log_z(model.config)};
  const NceSampler* nce = model.config.loss == LossKind::Nce ? &sampler : nullptr;
  const WindowResult r = run_window(model, window, state.lstm, masks, &grads, nce);
  if (!std::isfinite(r.loss_sum))
    throw std::runtime_error("training diverged: non-finite loss");
  StepStats stats;
  stats.loss = r.mean();
  stats.grad_norm = clip_gradients(grads, cfg.clip_norm);
  if (!std::isfinite(stats.grad_norm)) throw std::runtime_error("training diverged: non-finite gradient");
  apply_update(model, grads, opt);
  return stats;
}

struct Checkpoint {
  Model model;
  TrainConfig train;
  OptimizerState optimizer;
  std::uint64_t vocab_hash = 0;
  std::uint64_t epoch = 0;
  double best_valid_ppl = std::numeric_limits<double>::infinity();
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_ppl = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

inline constexpr std::string_view kTrainLogHeader = "epoch,train_loss,valid_ppl,lr,seconds";

inline std::string format_log_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.valid_ppl) +
         "," + format_double(e.lr) + "," + format_double(e.seconds);
}

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  double initial_valid_ppl = 0.0;
};

struct TrainData {
  TokenStream train;
  TokenStream valid;
  std::vector<std::uint64_t> unigram_counts;  // for the NCE noise table
  std::uint64_t vocab_hash = 0;
};

// Epoch loop with validation after each `eval_interval` epochs. In SGD mode
// the learning rate is multiplied by lr_decay after every epoch whose
// validation perplexity does not improve on the best so far. The best model
// (by validation perplexity) is returned.
inline TrainResult train(Model model, const TrainData& data, const TrainConfig& cfg,
                         std::ostream* progress = nullptr) {
  validate(cfg);
  using Clock = std::chrono::steady_clock;
  TrainResult result;
  OptimizerState opt = make_optimizer(model, cfg);
  TrainState state = make_train_state(model, cfg, data.unigram_counts);

  result.initial_valid_ppl = evaluate_ppl(model, data.valid);
  result.best = Checkpoint{model, cfg, opt, data.vocab_hash, 0, result.initial_valid_ppl};
  if (cfg.max_epochs == 0) return result;

  const std::vector<Window> windows = batchify(data.train, cfg.batch, cfg.bptt);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = Clock::now();
    state.lstm = LstmState::zeros(model.config.layers, model.config.hidden, cfg.batch);
    const double epoch_lr = opt.lr;
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (const Window& w : windows) {
      const StepStats s = train_step(model, w, opt, state, cfg);
      loss_sum += s.loss * static_cast<double>(w.steps * w.batch);
      tokens += w.steps * w.batch;
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(tokens);
    row.lr = epoch_lr;
    const bool validate_now = epoch % cfg.eval_interval == 0 || epoch == cfg.max_epochs;
    row.valid_ppl = validate_now ? evaluate_ppl(model, data.valid) : std::nan("");
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    row.seconds = cfg.log_time ? secs : 0.0;
    if (validate_now) {
      if (row.valid_ppl < result.best.best_valid_ppl) {
        result.best = Checkpoint{model, cfg, opt, data.vocab_hash, epoch, row.valid_ppl};
      } else if (opt.kind == Optimizer::Sgd) {
        opt.lr *= cfg.lr_decay;
      }
    }
    if (progress)
      *progress << "epoch " << epoch << " train_loss " << row.train_loss << " valid_ppl " << row.valid_ppl
                << " lr " << epoch_lr << " (" << secs << " s)\n";
    result.log.push_back(row);
  }
  return result;
}

// ---- configuration <-> key/value ------------------------------------------

inline void to_config(const ModelConfig& c, KeyValueConfig& kv) {
  kv.set("layers", std::to_string(c.layers));
  kv.set("hidden", std::to_string(c.hidden));
  kv.set("vocab", std::to_string(c.vocab));
  kv.set("scheme_in", sharing_name(c.input));
  kv.set("k_in", std::to_string(c.input.parts));
  kv.set("m_in", std::to_string(c.input.pool));
  kv.set("scheme_out", sharing_name(c.output));
  kv.set("k_out", std::to_string(c.output.parts));
  kv.set("m_out", std::to_string(c.output.pool));
  kv.set("dropout", format_double(c.dropout));
  kv.set("dropout_embed", format_double(c.dropout_embed));
  kv.set("loss", c.loss == LossKind::Nce ? "nce" : "full");
  kv.set("nce_k", std::to_string(c.nce_k));
  kv.set("nce_norm", c.nce_norm == NceNorm::Vocab ? "vocab" : "one");
  kv.set("seed", std::to_string(c.seed));
}

inline void to_config(const TrainConfig& c, KeyValueConfig& kv) {
  kv.set("lr", format_double(c.lr));
  kv.set("lr_decay", format_double(c.lr_decay));
  kv.set("optimizer", c.optimizer == Optimizer::Adagrad ? "adagrad" : "sgd");
  kv.set("clip", format_double(c.clip_norm));
  kv.set("batch", std::to_string(c.batch));
  kv.set("bptt", std::to_string(c.bptt));
  kv.set("max_epochs", std::to_string(c.max_epochs));
  kv.set("eval_interval", std::to_string(c.eval_interval));
  kv.set("log_time", c.log_time ? "true" : "false");
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "full") return LossKind::FullSoftmax;
  if (s == "nce") return LossKind::Nce;
  throw ConfigError("loss must be 'full' or 'nce', got '" + s + "'");
}

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adagrad") return Optimizer::Adagrad;
  throw ConfigError("optimizer must be 'sgd' or 'adagrad', got '" + s + "'");
}

// A layer without scheme_<side> is dense unless k_, m_ or ratio_<side> is set.
inline std::string default_scheme(const KeyValueConfig& kv, const std::string& side, const char* shared) {
  for (const char* k : {"k_", "m_", "ratio_"})
    if (kv.has(k + side)) return shared;
  return "dense";
}

// Vocabulary size and pool sizes are left as given (0 when absent).
inline ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig c;
  c.layers = kv.get_u64("layers", c.layers);
  c.hidden = kv.get_u64("hidden", c.hidden);
  c.vocab = kv.get_u64("vocab", 0);
  try {
    c.input = parse_sharing(kv.get_string("scheme_in", default_scheme(kv, "in", "balanced")),
                            kv.get_u64("k_in", 1), kv.get_u64("m_in", 0));
    c.output = parse_sharing(kv.get_string("scheme_out", default_scheme(kv, "out", "partitioned")),
                             kv.get_u64("k_out", 1), kv.get_u64("m_out", 0));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.dropout = kv.get_double("dropout", c.dropout);
  c.dropout_embed = kv.get_double("dropout_embed", c.dropout_embed);
  c.loss = parse_loss(kv.get_string("loss", "full"));
  c.nce_k = kv.get_u64("nce_k", c.nce_k);
  const std::string norm = kv.get_string("nce_norm", "vocab");
  if (norm != "vocab" && norm != "one") throw ConfigError("nce_norm must be 'vocab' or 'one', got '" + norm + "'");
  c.nce_norm = norm == "one" ? NceNorm::One : NceNorm::Vocab;
  c.seed = kv.get_u64("seed", c.seed);
  return c;
}

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.lr = kv.get_double("lr", c.lr);
  c.lr_decay = kv.get_double("lr_decay", c.lr_decay);
  c.optimizer = parse_optimizer(kv.get_string("optimizer", "sgd"));
  c.clip_norm = kv.get_double("clip", c.clip_norm);
  c.batch = kv.get_u64("batch", c.batch);
  c.bptt = kv.get_u64("bptt", c.bptt);
  c.max_epochs = kv.get_u64("max_epochs", c.max_epochs);
  c.eval_interval = kv.get_u64("eval_interval", c.eval_interval);
  c.log_time = kv.get_bool("log_time", c.log_time);
  return c;
}

// ---- checkpoint I/O ---------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "SLIMLM1\n";

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void put_block(std::ostream& os, std::span<const double> block) {
  for (double v : block) put_f64(os, v);
}

inline void get_block(std::istream& is, std::span<double> block) {
  for (double& v : block) v = get_f64(is);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const ModelConfig& c = ck.model.config;
  const auto& in = ck.model.input.mapping;
  const auto& out = ck.model.output.mapping;
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  std::uint64_t flags = 0;
  if (c.input.dense) flags |= 1;
  if (c.output.dense) flags |= 2;
  if (c.loss == LossKind::Nce) flags |= 4;
  if (ck.optimizer.kind == Optimizer::Adagrad) flags |= 8;
  for (std::uint64_t v : {std::uint64_t(c.layers), std::uint64_t(c.hidden), std::uint64_t(c.vocab),
                          std::uint64_t(in.parts()), std::uint64_t(in.pool_size()),
                          std::uint64_t(out.parts()), std::uint64_t(out.pool_size()), flags})
    detail::put_u64(os, v);
  write_mapping(os, in);
  write_mapping(os, out);

  for (auto s : param_spans(ck.model)) detail::put_block(os, s);
  detail::put_f64(os, ck.optimizer.lr);
  detail::put_u64(os, ck.optimizer.accum ? 1 : 0);
  if (ck.optimizer.accum) {
    for (auto s : grad_spans(*ck.optimizer.accum)) detail::put_block(os, s);
  }
  detail::put_u64(os, ck.vocab_hash);
  detail::put_u64(os, ck.epoch);
  detail::put_f64(os, ck.best_valid_ppl);
  KeyValueConfig kv;
  to_config(c, kv);
  to_config(ck.train, kv);
  const std::string text = kv.text();
  detail::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic(kCheckpointMagic.size(), '\0');
  if (!is.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic (not a SLIMLM1 file)");
  std::uint64_t h[8];
  for (auto& v : h) v = detail::get_u64(is);
  const std::uint64_t flags = h[7];

  SubVectorMapping in = read_mapping(is);
  SubVectorMapping out = read_mapping(is);
  if (in.vocab_size() != h[2] || out.vocab_size() != h[2] || in.parts() != h[3] ||
      in.pool_size() != h[4] || out.parts() != h[5] || out.pool_size() != h[6])
    throw std::runtime_error("checkpoint: mapping tables disagree with header");
  if (h[0] == 0 || h[1] == 0 || h[1] % in.parts() != 0 || h[1] % out.parts() != 0)
    throw std::runtime_error("checkpoint: inconsistent dimensions");

  // Parameters come before the config trailer; read them into a model
  // shaped by the header, then attach the trailer's settings.
  const std::size_t n = h[1];
  Model m{ModelConfig{}, SlimEmbedding{std::move(in), EmbeddingPool()}, {}, OutputLayer{std::move(out), EmbeddingPool()}};
  m.input.pool = EmbeddingPool(m.input.mapping.pool_size(), n / m.input.mapping.parts());
  for (std::size_t l = 0; l < h[0]; ++l) m.lstm.layers.emplace_back(n);
  m.output.pool = EmbeddingPool(m.output.mapping.pool_size(), n / m.output.mapping.parts());
  for (auto s : param_spans(m)) detail::get_block(is, s);

  Checkpoint ck{std::move(m), {}, {}, 0, 0, 0.0};
  ck.optimizer.kind = (flags & 8) ? Optimizer::Adagrad : Optimizer::Sgd;
  ck.optimizer.lr = detail::get_f64(is);
  if (detail::get_u64(is) != 0) {
    ck.optimizer.accum.emplace(ck.model);
    for (auto s : grad_spans(*ck.optimizer.accum)) detail::get_block(is, s);
  }
  ck.vocab_hash = detail::get_u64(is);
  ck.epoch = detail::get_u64(is);
  ck.best_valid_ppl = detail::get_f64(is);
  const std::uint64_t len = detail::get_u64(is);
  if (len > (1u << 24)) throw std::runtime_error("checkpoint: implausible config length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("checkpoint: truncated config");
  const KeyValueConfig kv = KeyValueConfig::parse(text, "checkpoint");
  ModelConfig c = model_config_from(kv);
  c.vocab = h[2];
  c.layers = h[0];
  c.hidden = n;
  c.input.dense = (flags & 1) != 0;
  c.output.dense = (flags & 2) != 0;
  c.loss = (flags & 4) ? LossKind::Nce : LossKind::FullSoftmax;
  ck.model.config = c;
  ck.train = train_config_from(kv);
  validate(ck.model.config);
  check_output_layer(ck.model.output);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(os, ck);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace slimlm
