#pragma once

// Output-layer timing: dense softmax vs. on-the-fly hashed sharing vs. the
// two-step DP over shared sub-vectors, all evaluating the same effective
// V x H weight matrix.
//
// The shared weights come from a hashed mapping so that the hash variant
// can recompute every weight element from (seed, word, position) without a
// table; the DP variant uses the materialized table and the dense variant a
// materialized V x H matrix.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <new>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimlm/mapping.hpp"
#include "slimlm/softmax.hpp"

namespace slimlm {

enum class BenchVariant { Dense, HashOnTheFly, SeDp };

inline std::string_view to_string(BenchVariant v) {
  switch (v) {
    case BenchVariant::Dense: return "dense";
    case BenchVariant::HashOnTheFly: return "hash_on_the_fly";
    case BenchVariant::SeDp: return "se_dp";
  }
  return "?";
}

inline BenchVariant parse_variant(std::string_view s) {
  if (s == "dense") return BenchVariant::Dense;
  if (s == "hash_on_the_fly") return BenchVariant::HashOnTheFly;
  if (s == "se_dp") return BenchVariant::SeDp;
  throw std::invalid_argument("unknown benchmark variant '" + std::string(s) + "'");
}

struct BenchSpec {
  std::size_t vocab = 50000;
  std::size_t hidden = 512;
  std::size_t parts = 8;
  std::size_t pool = 4096;
  std::size_t tokens = 20;  // hidden vectors per measured minibatch
  std::size_t repetitions = 5;
  std::size_t warmup = 3;
  std::vector<BenchVariant> variants{BenchVariant::Dense, BenchVariant::HashOnTheFly, BenchVariant::SeDp};
  std::uint64_t seed = 1;
};

struct VariantResult {
  BenchVariant variant{};
  std::size_t vocab = 0, hidden = 0, parts = 0, pool = 0;
  double median_s = 0.0, mean_s = 0.0, min_s = 0.0;
  std::uint64_t macs = 0;
  std::uint64_t adds = 0;
  std::uint64_t param_bytes = 0;
  double max_rel_dev = 0.0;  // vs. the reference logits
  // se_dp only: medians of the two steps timed separately.
  double step1_median_s = 0.0, step2_median_s = 0.0;
  std::string error;  // non-empty when the variant could not run

  std::uint64_t flops() const { return macs + adds; }
};

struct BenchResult {
  std::vector<VariantResult> variants;
};

inline void validate(const BenchSpec& s) {
  if (s.vocab == 0 || s.hidden == 0 || s.parts == 0 || s.pool == 0 || s.tokens == 0 || s.repetitions == 0)
    throw std::invalid_argument("benchmark dimensions must be positive");
  if (s.hidden % s.parts != 0) throw std::invalid_argument("K must divide H");
  if (s.pool % s.parts != 0) throw std::invalid_argument("K must divide M");
}

// V x B logits, recomputing each weight element from the hash for every
// element visit; no table and no dense matrix are kept.
inline Matrix logits_hash_on_the_fly(const EmbeddingPool& pool, std::uint64_t seed, std::size_t vocab,
                                     std::size_t parts, const Matrix& hidden, FlopCounter* flops = nullptr) {
  const std::size_t d = pool.sub_dim();
  const std::size_t psize = pool.pool_size() / parts;
  const std::size_t H = d * parts;
  const auto B = hidden.cols();
  // Row-major copy of the contexts so each weight element meets a
  // contiguous run of B values.
  const RowMatrix hrow = hidden;
  Matrix z = Matrix::Zero(static_cast<Eigen::Index>(vocab), B);
  std::vector<double> acc(static_cast<std::size_t>(B));
  for (std::size_t w = 0; w < vocab; ++w) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t p = j / d;
      const double weight = pool.data(hashed_slot(seed, w, p, psize), static_cast<Eigen::Index>(j - p * d));
      const double* hj = hrow.row(static_cast<Eigen::Index>(j)).data();
      for (Eigen::Index b = 0; b < B; ++b) acc[static_cast<std::size_t>(b)] += weight * hj[b];
    }
    for (Eigen::Index b = 0; b < B; ++b) z(static_cast<Eigen::Index>(w), b) = acc[static_cast<std::size_t>(b)];
  }
  if (flops) flops->macs += static_cast<std::uint64_t>(vocab) * H * static_cast<std::uint64_t>(B);
  return z;
}

// Row w is e_w.
inline RowMatrix materialize(const OutputLayer& layer) {
  const auto d = static_cast<Eigen::Index>(layer.sub_dim());
  RowMatrix e(static_cast<Eigen::Index>(layer.vocab_size()), static_cast<Eigen::Index>(layer.hidden_dim()));
  for (std::size_t w = 0; w < layer.vocab_size(); ++w)
    for (std::size_t p = 0; p < layer.parts(); ++p)
      e.row(static_cast<Eigen::Index>(w)).segment(static_cast<Eigen::Index>(p) * d, d) =
          layer.pool.data.row(layer.mapping.at(w, p));
  return e;
}

inline Matrix logits_dense(const RowMatrix& weights, const Matrix& hidden, FlopCounter* flops = nullptr) {
  Matrix z(weights.rows(), hidden.cols());
  z.noalias() = weights * hidden;
  if (flops) flops->macs += static_cast<std::uint64_t>(weights.rows() * weights.cols() * hidden.cols());
  return z;
}

inline double max_relative_deviation(const Matrix& got, const Matrix& ref) {
  const double scale = 1.0 + ref.cwiseAbs().maxCoeff();
  return (got - ref).cwiseAbs().maxCoeff() / scale;
}

namespace detail {

struct Timing {
  double median = 0.0, mean = 0.0, min = 0.0;
};

inline Timing summarize(std::vector<double> t) {
  Timing s;
  std::sort(t.begin(), t.end());
  s.min = t.front();
  s.mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
  const std::size_t m = t.size() / 2;
  s.median = t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
  return s;
}

template <typename Fn>
std::vector<double> time_runs(std::size_t warmup, std::size_t reps, Fn&& fn) {
  using Clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> out;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    fn();
    out.push_back(std::max(std::chrono::duration<double>(Clock::now() - t0).count(), 1e-9));
  }
  return out;
}

}  // namespace detail

inline BenchResult run_bench(const BenchSpec& spec) {
  validate(spec);
  const std::uint64_t map_seed = derive_seed(spec.seed, "bench-map");
  OutputLayer layer = make_output_layer(build_hashed_mapping(spec.vocab, spec.parts, spec.pool, map_seed),
                                        spec.hidden);
  SplitMix64 rng(derive_seed(spec.seed, "bench-data"));
  for (Eigen::Index i = 0; i < layer.pool.data.size(); ++i) layer.pool.data.data()[i] = rng.uniform(-1.0, 1.0);
  Matrix hidden(static_cast<Eigen::Index>(spec.hidden), static_cast<Eigen::Index>(spec.tokens));
  for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden.data()[i] = rng.uniform(-1.0, 1.0);

  // Reference: DP result, checked against the naive per-word path.
  const Matrix reference = logits_dp_batch(layer, hidden);

  BenchResult result;
  for (BenchVariant v : spec.variants) {
    VariantResult r;
    r.variant = v;
    r.vocab = spec.vocab;
    r.hidden = spec.hidden;
    r.parts = spec.parts;
    r.pool = spec.pool;
    try {
      FlopCounter flops;
      Matrix z;
      std::vector<double> times;
      switch (v) {
        case BenchVariant::Dense: {
          const RowMatrix weights = materialize(layer);
          z = logits_dense(weights, hidden, &flops);
          times = detail::time_runs(spec.warmup, spec.repetitions, [&] { z = logits_dense(weights, hidden); });
          r.param_bytes = static_cast<std::uint64_t>(weights.size()) * sizeof(double);
          break;
        }
        case BenchVariant::HashOnTheFly: {
          z = logits_hash_on_the_fly(layer.pool, map_seed, spec.vocab, spec.parts, hidden, &flops);
          times = detail::time_runs(spec.warmup, spec.repetitions, [&] {
            z = logits_hash_on_the_fly(layer.pool, map_seed, spec.vocab, spec.parts, hidden);
          });
          r.param_bytes = static_cast<std::uint64_t>(layer.pool.data.size()) * sizeof(double);
          break;
        }
        case BenchVariant::SeDp: {
          z = logits_dp_batch(layer, hidden, &flops);
          times = detail::time_runs(spec.warmup, spec.repetitions, [&] { z = logits_dp_batch(layer, hidden); });
          Matrix u;
          const auto s1 = detail::time_runs(spec.warmup, spec.repetitions, [&] { u = partial_products(layer, hidden); });
          Matrix zz;
          const auto s2 = detail::time_runs(spec.warmup, spec.repetitions, [&] { zz = sum_partials(layer, u); });
          r.step1_median_s = detail::summarize(s1).median;
          r.step2_median_s = detail::summarize(s2).median;
          r.param_bytes = static_cast<std::uint64_t>(layer.pool.data.size()) * sizeof(double);
          break;
        }
      }
      const auto t = detail::summarize(times);
      r.median_s = t.median;
      r.mean_s = t.mean;
      r.min_s = t.min;
      r.macs = flops.macs;
      r.adds = flops.adds;
      r.max_rel_dev = max_relative_deviation(z, reference);
    } catch (const std::bad_alloc&) {
      r.error = "out of memory";
    }
    result.variants.push_back(std::move(r));
  }
  return result;
}

// Analytic counts for one minibatch.
inline FlopCounter expected_flops(BenchVariant v, std::size_t vocab, std::size_t hidden, std::size_t parts,
                                  std::size_t pool, std::size_t tokens) {
  FlopCounter f;
  if (v == BenchVariant::SeDp) {
    f.macs = static_cast<std::uint64_t>(tokens) * pool * (hidden / parts);
    f.adds = static_cast<std::uint64_t>(tokens) * vocab * (parts - 1);
  } else {
    f.macs = static_cast<std::uint64_t>(tokens) * vocab * hidden;
  }
  return f;
}

inline constexpr std::string_view kBenchCsvHeader = "V,H,K,M,variant,median_s,mean_s,min_s,flops,param_bytes";

inline std::string shortest(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ec == std::errc() ? p : buf);
}

inline void write_bench_csv(std::ostream& os, const std::vector<VariantResult>& rows) {
  os << kBenchCsvHeader << '\n';
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    os << r.vocab << ',' << r.hidden << ',' << r.parts << ',' << r.pool << ',' << to_string(r.variant) << ','
       << shortest(r.median_s) << ',' << shortest(r.mean_s) << ',' << shortest(r.min_s) << ',' << r.flops()
       << ',' << r.param_bytes << '\n';
  }
}

inline void emit_csv(const std::vector<VariantResult>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_bench_csv(os, rows);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

// Parses a file written by emit_csv.
inline std::vector<VariantResult> read_bench_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kBenchCsvHeader) throw std::runtime_error("bench csv: bad header");
  std::vector<VariantResult> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw std::runtime_error("bench csv: expected 10 columns");
    VariantResult r;
    r.vocab = std::stoull(f[0]);
    r.hidden = std::stoull(f[1]);
    r.parts = std::stoull(f[2]);
    r.pool = std::stoull(f[3]);
    r.variant = parse_variant(f[4]);
    auto num = [](const std::string& s) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("bench csv: bad number " + s);
      return v;
    };
    r.median_s = num(f[5]);
    r.mean_s = num(f[6]);
    r.min_s = num(f[7]);
    r.macs = std::stoull(f[8]);
    r.param_bytes = std::stoull(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Spearman rank correlation (average ranks for ties).
inline double rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("rank correlation needs paired samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace slimlm
