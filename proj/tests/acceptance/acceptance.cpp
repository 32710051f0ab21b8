// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `acceptance 3 7` runs only the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "commands.hpp"
#include "slimlm/bench.hpp"
#include "slimlm/trainer.hpp"

using namespace slimlm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <typename Block>
void fill(Block& m, SplitMix64& rng, double lo, double hi) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
}

// Central-difference statistics over a list of coordinates.
struct FdStats {
  std::size_t total = 0, within = 0;
  double worst = 0.0;
  void add(double fd, double analytic) {
    const double err = std::abs(fd - analytic) / std::max({1.0, std::abs(fd), std::abs(analytic)});
    ++total;
    within += err < 1e-6;
    worst = std::max(worst, err);
  }
  bool ok() const { return total > 0 && within >= 0.99 * static_cast<double>(total) && worst < 1e-4; }
  std::string str(const char* name) const {
    std::ostringstream os;
    os << name << " " << within << "/" << total << " worst=" << std::scientific << std::setprecision(2) << worst;
    return os.str();
  }
};

constexpr double kStep = 1e-5;

template <typename Loss>
void fd_check(double* x, std::size_t count, const double* analytic, Loss&& loss, FdStats& st) {
  for (std::size_t i = 0; i < count; ++i) {
    const double orig = x[i];
    x[i] = orig + kStep;
    const double lp = loss();
    x[i] = orig - kStep;
    const double lm = loss();
    x[i] = orig;
    st.add((lp - lm) / (2 * kStep), analytic[i]);
  }
}

// ---------------------------------------------------------------------------

Outcome c1_dp_vs_naive() {
  SplitMix64 rng(101);
  const std::size_t ks[] = {1, 2, 4, 8, 16};
  double worst = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int cfg = 0; cfg < 500; ++cfg) {
    const std::size_t V = 1 + rng.below(1000);
    const std::size_t K = ks[rng.below(5)];
    const std::size_t d = 1 + rng.below(256 / K);
    const std::size_t H = K * d;
    // M in [K, K*V], a multiple of K for the position-partitioned layout.
    const std::size_t M = K * (1 + rng.below(V));
    const auto mapping = rng.below(2) ? build_partitioned_mapping(V, K, M, rng.next())
                                      : build_hashed_mapping(V, K, M, rng.next());
    OutputLayer layer = make_output_layer(mapping, H);
    fill(layer.pool.data, rng, -1, 1);
    Vector h(static_cast<Eigen::Index>(H));
    for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1, 1);
    const Vector z = logits_dp(layer, h);
    for (std::size_t w = 0; w < V; ++w) {
      double naive = 0.0;
      for (std::size_t j = 0; j < H; ++j)
        naive += layer.pool.data(mapping.at(w, j / d), static_cast<Eigen::Index>(j % d)) *
                 h[static_cast<Eigen::Index>(j)];
      const double rel = std::abs(z[static_cast<Eigen::Index>(w)] - naive) / std::max(1.0, std::abs(naive));
      worst = std::max(worst, rel);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 1e-10 && secs < 60.0, fmt("max_rel=%.3e", worst) + fmt(" time=%.2fs", secs)};
}

// Plain-loop LSTM LM with a V x H input embedding matrix.
struct ReferenceLm {
  std::size_t n = 0;
  std::vector<std::vector<double>> embed;  // [w][j]
  std::vector<std::vector<std::vector<double>>> weight;  // [l][row][col], 2n x 4n
  std::vector<std::vector<double>> bias;                 // [l][4n]
  std::vector<std::vector<double>> out;                  // [w][j]

  static double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  // Mean NLL over a window, each lane from zero state.
  double window_loss(const Window& w) const {
    const std::size_t L = weight.size();
    double total = 0.0;
    for (std::size_t b = 0; b < w.batch; ++b) {
      std::vector<std::vector<double>> h(L, std::vector<double>(n, 0.0)), c = h;
      for (std::size_t t = 0; t < w.steps; ++t) {
        std::vector<double> x = embed[w.input_at(t, b)];
        for (std::size_t l = 0; l < L; ++l) {
          std::vector<double> pre(bias[l]);
          for (std::size_t j = 0; j < 4 * n; ++j)
            for (std::size_t r = 0; r < n; ++r) pre[j] += weight[l][r][j] * x[r] + weight[l][n + r][j] * h[l][r];
          for (std::size_t r = 0; r < n; ++r) {
            const double ig = sig(pre[r]), fg = sig(pre[n + r]), og = sig(pre[2 * n + r]), gg = std::tanh(pre[3 * n + r]);
            c[l][r] = fg * c[l][r] + ig * gg;
            h[l][r] = og * std::tanh(c[l][r]);
          }
          x = h[l];
        }
        std::vector<double> z(out.size(), 0.0);
        for (std::size_t v = 0; v < out.size(); ++v)
          for (std::size_t r = 0; r < n; ++r) z[v] += out[v][r] * x[r];
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double zv : z) s += std::exp(zv - mx);
        total += std::log(s) + mx - z[w.target_at(t, b)];
      }
    }
    return total / static_cast<double>(w.steps * w.batch);
  }
};

Outcome c2_uncompressed_equivalence() {
  const std::size_t V = 40, H = 16, K = 4;
  ModelConfig cfg;
  cfg.vocab = V;
  cfg.hidden = H;
  cfg.layers = 2;
  cfg.input = parse_sharing("balanced", K, K * V);
  cfg.output = SharingConfig{};
  cfg.seed = 77;
  Model model = init_model(cfg);
  SplitMix64 rng(202);
  for_each_block(model, [&](auto& b) { fill(b, rng, -0.5, 0.5); });

  // The mapping must be a bijection onto the pool.
  std::vector<int> seen(K * V, 0);
  for (std::size_t w = 0; w < V; ++w)
    for (std::size_t p = 0; p < K; ++p) ++seen[model.input.mapping.at(w, p)];
  const bool bijective = std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });

  ReferenceLm ref;
  ref.n = H;
  const std::size_t d = H / K;
  ref.embed.assign(V, std::vector<double>(H));
  ref.out.assign(V, std::vector<double>(H));
  for (std::size_t w = 0; w < V; ++w)
    for (std::size_t j = 0; j < H; ++j) {
      ref.embed[w][j] = model.input.pool.data(model.input.mapping.at(w, j / d), static_cast<Eigen::Index>(j % d));
      ref.out[w][j] = model.output.pool.data(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(j));
    }
  for (const auto& layer : model.lstm.layers) {
    std::vector<std::vector<double>> W(2 * H, std::vector<double>(4 * H));
    for (std::size_t r = 0; r < 2 * H; ++r)
      for (std::size_t c = 0; c < 4 * H; ++c)
        W[r][c] = layer.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    ref.weight.push_back(W);
    ref.bias.emplace_back(layer.bias.data(), layer.bias.data() + layer.bias.size());
  }

  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Window w;
    w.steps = 1 + rng.below(8);
    w.batch = 1 + rng.below(3);
    for (std::size_t k = 0; k < w.steps * w.batch; ++k) {
      w.input.push_back(static_cast<WordId>(rng.below(V)));
      w.target.push_back(static_cast<WordId>(rng.below(V)));
    }
    LstmState s = LstmState::zeros(2, H, w.batch);
    worst = std::max(worst, std::abs(run_window(model, w, s).mean() - ref.window_loss(w)));
  }
  return {bijective && worst <= 1e-12, fmt("bijective=%.0f", bijective) + fmt(" max_abs_diff=%.3e", worst)};
}

Outcome c3_gradients() {
  SplitMix64 rng(303);
  std::vector<std::string> parts;
  bool ok = true;

  {  // embed_backward: loss = sum_i r_i . e(w_i)
    const auto mapping = build_balanced_mapping(15, 3, 20, 1);
    EmbeddingPool pool(20, 4);
    fill(pool.data, rng, -1, 1);
    const std::vector<std::size_t> words{0, 3, 3, 14, 7};
    std::vector<Vector> r;
    for (std::size_t i = 0; i < words.size(); ++i) r.push_back(Vector::NullaryExpr(12, [&] { return rng.uniform(-1, 1); }));
    auto loss = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < words.size(); ++i) {
        const Vector e = embed_forward(pool, mapping, words[i]);
        s += r[i].dot(e) + 0.5 * e.squaredNorm();
      }
      return s;
    };
    PoolGradient g(pool);
    for (std::size_t i = 0; i < words.size(); ++i) {
      const Vector e = embed_forward(pool, mapping, words[i]);
      embed_backward(g, mapping, words[i], Vector(r[i] + e));
    }
    FdStats st;
    fd_check(pool.data.data(), static_cast<std::size_t>(pool.data.size()), g.data.data(), loss, st);
    ok &= st.ok();
    parts.push_back(st.str("embed"));
  }

  {  // output_backward: softmax cross-entropy through the DP logits
    OutputLayer layer = make_output_layer(build_partitioned_mapping(30, 4, 24, 2), 12);
    fill(layer.pool.data, rng, -1, 1);
    Vector h = Vector::NullaryExpr(12, [&] { return rng.uniform(-1, 1); });
    const std::size_t target = 17;
    auto loss = [&] { return softmax_xent(logits_dp(layer, h), target).loss; };
    const OutputGrad g = output_backward(layer, h, softmax_xent(logits_dp(layer, h), target).grad);
    FdStats st;
    fd_check(layer.pool.data.data(), static_cast<std::size_t>(layer.pool.data.size()), g.grad_pool.data.data(), loss, st);
    fd_check(h.data(), static_cast<std::size_t>(h.size()), g.grad_h.data(), loss, st);
    ok &= st.ok();
    parts.push_back(st.str("output"));
  }

  {  // lstm_cell_backward with a dropout mask
    const std::size_t n = 5, B = 3;
    LstmLayerParams p(n);
    fill(p.weight, rng, -0.8, 0.8);
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = rng.uniform(-0.5, 0.5);
    Matrix x(n, B), h0(n, B), c0(n, B), rh(n, B), rc(n, B);
    for (Matrix* m : {&x, &h0, &c0, &rh, &rc}) fill(*m, rng, -1, 1);
    const DropoutMask mask = make_dropout_mask(n, B, 0.3, rng);
    auto loss = [&] {
      const CellOutput o = lstm_cell_forward(p, x, h0, c0, mask);
      return o.h.cwiseProduct(rh).sum() + o.c.cwiseProduct(rc).sum();
    };
    const CellOutput o = lstm_cell_forward(p, x, h0, c0, mask);
    const CellBackward g = lstm_cell_backward(p, o.cache, rh, rc);
    FdStats st;
    fd_check(p.weight.data(), static_cast<std::size_t>(p.weight.size()), g.params.weight.data(), loss, st);
    fd_check(p.bias.data(), static_cast<std::size_t>(p.bias.size()), g.params.bias.data(), loss, st);
    fd_check(x.data(), static_cast<std::size_t>(x.size()), g.grads.x.data(), loss, st);
    fd_check(h0.data(), static_cast<std::size_t>(h0.size()), g.grads.h_prev.data(), loss, st);
    fd_check(c0.data(), static_cast<std::size_t>(c0.size()), g.grads.c_prev.data(), loss, st);
    ok &= st.ok();
    parts.push_back(st.str("cell"));
  }

  {  // stack_backward: two layers, four steps, dropout everywhere
    const std::size_t n = 4, B = 2, T = 4, L = 2;
    LstmStack stack;
    for (std::size_t l = 0; l < L; ++l) {
      stack.layers.emplace_back(n);
      fill(stack.layers[l].weight, rng, -0.8, 0.8);
      for (Eigen::Index i = 0; i < stack.layers[l].bias.size(); ++i) stack.layers[l].bias[i] = rng.uniform(-0.5, 0.5);
    }
    std::vector<Matrix> xs(T, Matrix(n, B)), rs(T, Matrix(n, B));
    for (auto& m : xs) fill(m, rng, -1, 1);
    for (auto& m : rs) fill(m, rng, -1, 1);
    LstmState s0 = LstmState::zeros(L, n, B);
    for (auto& m : s0.h) fill(m, rng, -0.5, 0.5);
    for (auto& m : s0.c) fill(m, rng, -0.5, 0.5);
    const StackMasks masks = make_stack_masks(L, n, B, T, 0.2, 0.3, rng);
    auto loss = [&] {
      const StackForward f = stack_forward(stack, xs, s0, masks);
      double s = 0.0;
      for (std::size_t t = 0; t < T; ++t) s += f.top[t].cwiseProduct(rs[t]).sum();
      return s;
    };
    const StackBackward g = stack_backward(stack, stack_forward(stack, xs, s0, masks).cache, rs);
    FdStats st;
    for (std::size_t l = 0; l < L; ++l) {
      fd_check(stack.layers[l].weight.data(), static_cast<std::size_t>(stack.layers[l].weight.size()),
               g.grads[l].weight.data(), loss, st);
      fd_check(stack.layers[l].bias.data(), static_cast<std::size_t>(stack.layers[l].bias.size()),
               g.grads[l].bias.data(), loss, st);
    }
    for (std::size_t t = 0; t < T; ++t)
      fd_check(xs[t].data(), static_cast<std::size_t>(xs[t].size()), g.grad_inputs[t].data(), loss, st);
    ok &= st.ok();
    parts.push_back(st.str("stack"));
  }

  std::string detail;
  for (const auto& p : parts) detail += (detail.empty() ? "" : "; ") + p;
  return {ok, detail};
}

Outcome c4_balanced_and_partition() {
  SplitMix64 rng(404);
  std::size_t worst_spread = 0, divisible = 0, exact_fail = 0, membership_fail = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t V = 1 + rng.below(500), K = 1 + rng.below(16);
    std::size_t M;
    if (i % 2 == 0) {
      // Force M | K*V by picking a divisor.
      std::vector<std::size_t> divs;
      for (std::size_t m = 1; m <= K * V; ++m)
        if ((K * V) % m == 0) divs.push_back(m);
      M = divs[rng.below(divs.size())];
    } else {
      M = 1 + rng.below(K * V);
    }
    const auto m = build_balanced_mapping(V, K, M, rng.next());
    std::vector<std::size_t> count(M, 0);
    for (std::size_t w = 0; w < V; ++w)
      for (std::size_t p = 0; p < K; ++p) ++count[m.at(w, p)];
    const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
    worst_spread = std::max(worst_spread, *hi - *lo);
    if ((K * V) % M == 0) {
      ++divisible;
      exact_fail += *hi != *lo || *lo != K * V / M;
    }
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t V = 1 + rng.below(500), K = 1 + rng.below(16);
    const std::size_t M = K * (1 + rng.below(V));
    const auto m = i % 2 ? build_partitioned_mapping(V, K, M, rng.next()) : build_hashed_mapping(V, K, M, rng.next());
    const std::size_t part = M / K;
    for (std::size_t w = 0; w < V; ++w)
      for (std::size_t p = 0; p < K; ++p) membership_fail += m.at(w, p) / part != p;
  }
  std::ostringstream os;
  os << "max_spread=" << worst_spread << " divisible_cases=" << divisible << " exact_failures=" << exact_fail
     << " membership_violations=" << membership_fail;
  return {worst_spread <= 1 && exact_fail == 0 && divisible > 0 && membership_fail == 0, os.str()};
}

Outcome c5_flop_counts() {
  SplitMix64 rng(505);
  int bad = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t K = std::size_t{1} << rng.below(5), d = 1 + rng.below(16), H = K * d;
    const std::size_t V = 1 + rng.below(300), M = K * (1 + rng.below(V));
    OutputLayer layer = make_output_layer(build_partitioned_mapping(V, K, M, i), H);
    const Vector h = Vector::Ones(static_cast<Eigen::Index>(H));
    FlopCounter dp;
    logits_dp(layer, h, &dp);
    bad += dp.macs != M * H / K || dp.adds != V * (K - 1);
    FlopCounter dense;
    logits_dense(materialize(layer), Matrix(h), &dense);
    bad += dense.macs != V * H || dense.adds != 0;
  }
  return {bad == 0, "mismatches=" + std::to_string(bad) + " of 100 counts"};
}

Outcome c6_perplexity_extremes() {
  ModelConfig c;
  c.vocab = 37;
  c.hidden = 8;
  c.layers = 2;
  c.input = parse_sharing("balanced", 2, 20);
  c.output = SharingConfig{};
  Model uniform = init_model(c);
  uniform.output.pool.data.setZero();
  SplitMix64 rng(606);
  TokenStream stream;
  for (int i = 0; i < 500; ++i) stream.push_back(static_cast<WordId>(rng.below(c.vocab)));
  const double u = evaluate_ppl(uniform, stream);

  // Every unit saturates at the same h > 0; word 5 gets a huge logit.
  Model perfect = init_model(c);
  const auto n = static_cast<Eigen::Index>(c.hidden);
  for (auto& layer : perfect.lstm.layers) {
    layer.weight.setZero();
    layer.bias.setConstant(50.0);
    layer.bias.segment(n, n).setConstant(-50.0);
  }
  perfect.output.pool.data.setConstant(-1000.0);
  perfect.output.pool.data.row(5).setConstant(1000.0);
  const double p = evaluate_ppl(perfect, TokenStream(300, 5));
  return {std::abs(u - 37.0) <= 1e-9 && p == 1.0, fmt("uniform_ppl=%.12f (V=37)", u) + fmt(" perfect_ppl=%.12f", p)};
}

// --- training criteria -----------------------------------------------------

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / ("slimlm_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(root);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

// Synthetic corpus with about 400 word types; written once per process.
fs::path lm_corpus() {
  static const fs::path dir = [] {
    const fs::path d = workspace().root / "lm_data";
    SyntheticCorpusSpec spec;
    spec.classes = 20;
    spec.words_per_class = 20;
    std::ostringstream sink;
    if (app::cmd_synth(spec, 100000, 10000, 10000, d.string(), sink, sink) != 0)
      throw std::runtime_error("cannot write the synthetic corpus");
    return d;
  }();
  return dir;
}

KeyValueConfig lm_config(const std::string& run) {
  const fs::path d = lm_corpus();
  KeyValueConfig kv = KeyValueConfig::parse(
      "layers = 2\nhidden = 128\nbatch = 20\nbptt = 35\nlr = 20\nclip = 0.25\nmax_epochs = 5\nseed = 1\n");
  kv.set("train", (d / "train.txt").string(), "acceptance");
  kv.set("valid", (d / "valid.txt").string(), "acceptance");
  kv.set("test", (d / "test.txt").string(), "acceptance");
  kv.set("out", (workspace().root / run).string(), "acceptance");
  return kv;
}

// Test perplexity of one input-compressed run (memoized by (K, ratio)).
double input_compressed_test_ppl(std::size_t k, double ratio) {
  static std::map<std::pair<std::size_t, double>, double> cache;
  const auto key = std::make_pair(k, ratio);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  KeyValueConfig kv = lm_config("lm_k" + std::to_string(k) + "_r" + format_double(ratio));
  if (ratio < 1.0) {
    kv.set("k_in", std::to_string(k), "acceptance");
    kv.set("ratio_in", format_double(ratio), "acceptance");
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream log;
  const double ppl = app::run_training(kv, log).test_ppl;
  std::cerr << "  [k=" << k << " ratio=" << ratio << "] test_ppl=" << ppl << " ("
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
  cache[key] = ppl;
  return ppl;
}

Outcome c7_compression_quality() {
  const double full = input_compressed_test_ppl(8, 1.0);
  const double r8 = input_compressed_test_ppl(8, 1.0 / 8);
  const double r64 = input_compressed_test_ppl(8, 1.0 / 64);
  const bool ok = r8 <= 1.1 * full && r64 <= 1.1 * full;
  return {ok, fmt("uncompressed=%.3f", full) + fmt(" ratio_1/8=%.3f", r8) + fmt(" ratio_1/64=%.3f", r64)};
}

Outcome c8_k_matters() {
  const double k1 = input_compressed_test_ppl(1, 1.0 / 8);
  const double k4 = input_compressed_test_ppl(4, 1.0 / 8);
  const double k8 = input_compressed_test_ppl(8, 1.0 / 8);
  return {k1 > k4 && k1 > k8, fmt("K=1:%.3f", k1) + fmt(" K=4:%.3f", k4) + fmt(" K=8:%.3f", k8)};
}

Outcome c9_bench_ordering() {
  BenchSpec spec;  // V=50000, H=512, K=8, M=4096, 20 tokens
  spec.repetitions = 7;
  spec.warmup = 2;
  const auto r = run_bench(spec);
  double dp = 0, dense = 0, hash = 0;
  bool errors = false;
  for (const auto& v : r.variants) {
    errors |= !v.error.empty() || v.max_rel_dev > 1e-10;
    (v.variant == BenchVariant::SeDp ? dp : v.variant == BenchVariant::Dense ? dense : hash) = v.median_s;
  }
  return {!errors && dp < dense && dense < hash,
          fmt("se_dp=%.5fs", dp) + fmt(" dense=%.5fs", dense) + fmt(" hash_on_the_fly=%.5fs", hash)};
}

Outcome c10_nce() {
  const fs::path d = lm_corpus();
  const auto train_lines = read_lines((d / "train.txt").string());
  TrainData data;
  const Vocabulary vocab = build_vocab(train_lines);
  data.train = encode(train_lines, vocab);
  data.valid = encode(read_lines((d / "valid.txt").string()), vocab);
  data.unigram_counts = vocab.counts();
  data.vocab_hash = vocab.hash();

  ModelConfig mc;
  mc.vocab = vocab.size();
  mc.layers = 1;
  mc.hidden = 32;
  mc.seed = 3;
  TrainConfig tc;
  tc.batch = 20;
  tc.bptt = 35;
  tc.max_epochs = 5;
  tc.lr = 20.0;
  tc.clip_norm = 0.25;

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult full = train(init_model(mc), data, tc);
  mc.loss = LossKind::Nce;
  mc.nce_k = 20;
  const TrainResult nce = train(init_model(mc), data, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double a = nce.best.best_valid_ppl, b = full.best.best_valid_ppl;
  const bool ok = a < nce.initial_valid_ppl && a <= 1.2 * b && secs < 1800.0;
  return {ok, fmt("init=%.3f", nce.initial_valid_ppl) + fmt(" nce=%.3f", a) + fmt(" full=%.3f", b) +
                  fmt(" time=%.1fs", secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Outcome c11_reproducible() {
  SyntheticCorpusSpec spec;
  spec.classes = 6;
  spec.words_per_class = 6;
  const fs::path d = workspace().root / "repro_data";
  std::ostringstream sink;
  if (app::cmd_synth(spec, 6000, 1000, 1000, d.string(), sink, sink) != 0) return {false, "synth failed"};
  auto run = [&](const std::string& name) {
    KeyValueConfig kv = KeyValueConfig::parse(
        "layers = 2\nhidden = 16\nbatch = 4\nbptt = 10\nmax_epochs = 2\ndropout = 0.3\ndropout_embed = 0.1\n"
        "k_in = 4\nratio_in = 0.25\nk_out = 2\nratio_out = 0.5\nseed = 5\nlr = 5\n");
    kv.set("train", (d / "train.txt").string(), "acceptance");
    kv.set("valid", (d / "valid.txt").string(), "acceptance");
    kv.set("out", (workspace().root / name).string(), "acceptance");
    std::ostringstream out, err;
    return app::cmd_train(kv, out, err);
  };
  if (run("repro_a") != 0 || run("repro_b") != 0) return {false, "training failed"};
  const auto a = workspace().root / "repro_a", b = workspace().root / "repro_b";
  const bool log_same = slurp(a / "train_log.csv") == slurp(b / "train_log.csv");
  const bool ckpt_same = slurp(a / "model.ckpt") == slurp(b / "model.ckpt");
  const bool nonempty = !slurp(a / "model.ckpt").empty() && slurp(a / "train_log.csv").find('\n') != std::string::npos;
  return {log_same && ckpt_same && nonempty,
          std::string("train_log.csv ") + (log_same ? "identical" : "differs") + ", model.ckpt " +
              (ckpt_same ? "identical" : "differs") + ", " + std::to_string(slurp(a / "model.ckpt").size()) +
              " bytes"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "dp_matches_naive_logits", c1_dp_vs_naive},
      {2, "uncompressed_equals_dense_reference", c2_uncompressed_equivalence},
      {3, "gradients_match_finite_differences", c3_gradients},
      {4, "balanced_counts_and_partition_membership", c4_balanced_and_partition},
      {5, "flop_counters", c5_flop_counts},
      {6, "perplexity_extremes", c6_perplexity_extremes},
      {7, "input_compression_within_10_percent", c7_compression_quality},
      {8, "k1_worse_than_k4_k8", c8_k_matters},
      {9, "bench_ordering_dp_dense_hash", c9_bench_ordering},
      {10, "nce_close_to_full_softmax", c10_nce},
      {11, "train_reproducible_bytes", c11_reproducible},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail
              << fmt(" (%.1f s)", secs) << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
