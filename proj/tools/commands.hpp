#pragma once

// Subcommand implementations for the `slimlm` executable. Each returns a
// process exit code and writes human-readable output to the given streams.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "slimlm/bench.hpp"
#include "slimlm/config.hpp"
#include "slimlm/corpus.hpp"
#include "slimlm/mapping.hpp"
#include "slimlm/model.hpp"
#include "slimlm/synthetic.hpp"
#include "slimlm/trainer.hpp"

namespace slimlm::app {

namespace fs = std::filesystem;

// Pool size for one layer once V is known. Explicit m_* wins, then ratio_*
// (M = round(ratio * K * V)), else no compression (M = K * V). Partitioned
// and hashed pools are rounded to a multiple of K.
inline void resolve_pool(SharingConfig& s, double ratio, std::size_t vocab) {
  if (s.dense) {
    s.parts = 1;
    s.pool = vocab;
    return;
  }
  if (s.pool == 0) {
    const double slots = static_cast<double>(s.parts * vocab);
    s.pool = ratio > 0.0 ? static_cast<std::size_t>(std::llround(ratio * slots)) : s.parts * vocab;
    if (s.scheme != Scheme::Balanced) s.pool = std::max<std::size_t>(s.parts, (s.pool + s.parts / 2) / s.parts * s.parts);
    s.pool = std::max<std::size_t>(s.pool, 1);
  }
}

inline ModelConfig resolve_model_config(const KeyValueConfig& kv, std::size_t vocab) {
  ModelConfig c = model_config_from(kv);
  c.vocab = vocab;
  resolve_pool(c.input, kv.get_double("ratio_in", 0.0), vocab);
  resolve_pool(c.output, kv.get_double("ratio_out", 0.0), vocab);
  validate(c);
  return c;
}

inline std::string existing_path(const KeyValueConfig& kv, const std::string& key) {
  const std::string path = kv.require_string(key);
  if (!fs::exists(path)) throw ConfigError("path for '" + key + "' does not exist: " + path);
  return path;
}

struct TrainOutcome {
  double best_valid_ppl = 0.0;
  double test_ppl = std::nan("");
  std::size_t params = 0;
  fs::path out_dir;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// Trains per `kv` and writes vocab.txt, mapping_in.txt, mapping_out.txt,
// effective.cfg, train_log.csv and model.ckpt into the `out` directory.
inline TrainOutcome run_training(const KeyValueConfig& kv, std::ostream& err) {
  const std::string train_path = existing_path(kv, "train");
  const std::string valid_path = existing_path(kv, "valid");
  const std::string test_path = kv.has("test") ? existing_path(kv, "test") : "";
  const fs::path out = kv.require_string("out");

  const auto train_lines = read_lines(train_path);
  const Vocabulary vocab = build_vocab(train_lines, kv.get_u64("min_count", 1), kv.get_u64("max_vocab", 0));
  const ModelConfig mc = resolve_model_config(kv, vocab.size());
  const TrainConfig tc = train_config_from(kv);
  validate(tc);

  fs::create_directories(out);
  KeyValueConfig effective = kv;
  to_config(mc, effective);
  to_config(tc, effective);
  write_text(out / "effective.cfg", effective.text());
  save_vocab(vocab, (out / "vocab.txt").string());

  TrainData data;
  data.train = encode(train_lines, vocab);
  data.valid = encode(read_lines(valid_path), vocab);
  data.unigram_counts = vocab.counts();
  data.vocab_hash = vocab.hash();

  Model model = init_model(mc);
  save_mapping(model.input.mapping, (out / "mapping_in.txt").string());
  save_mapping(model.output.mapping, (out / "mapping_out.txt").string());
  const TrainResult result = train(std::move(model), data, tc, &err);

  std::string csv = std::string(kTrainLogHeader) + "\n";
  for (const auto& row : result.log) csv += format_log_row(row) + "\n";
  write_text(out / "train_log.csv", csv);
  save_checkpoint(result.best, (out / "model.ckpt").string());

  TrainOutcome o;
  o.best_valid_ppl = result.best.best_valid_ppl;
  o.params = trainable_params(result.best.model);
  o.out_dir = out;
  if (!test_path.empty()) o.test_ppl = evaluate_ppl(result.best.model, encode(read_lines(test_path), vocab));
  return o;
}

inline std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline int cmd_train(const KeyValueConfig& kv, std::ostream& out, std::ostream& err) {
  try {
    const TrainOutcome o = run_training(kv, err);
    out << "best_valid_ppl=" << fixed4(o.best_valid_ppl) << "\n";
    if (!std::isnan(o.test_ppl)) out << "test_ppl=" << fixed4(o.test_ppl) << "\n";
    out << "params=" << o.params << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << "\n";
    return 1;
  }
}

inline int cmd_eval(const std::string& checkpoint, const std::string& corpus, std::string vocab_path, bool force,
                    std::ostream& out, std::ostream& err) {
  try {
    const Checkpoint ck = load_checkpoint(checkpoint);
    if (vocab_path.empty()) vocab_path = (fs::path(checkpoint).parent_path() / "vocab.txt").string();
    const Vocabulary vocab = load_vocab(vocab_path);
    if (vocab.hash() != ck.vocab_hash) {
      if (!force) {
        err << "eval: vocabulary hash mismatch between " << vocab_path << " and " << checkpoint
            << " (use --force to evaluate anyway)\n";
        return 2;
      }
      err << "eval: warning: vocabulary hash mismatch, continuing (--force)\n";
    }
    if (vocab.size() != ck.model.config.vocab) {
      err << "eval: vocabulary has " << vocab.size() << " words, model expects " << ck.model.config.vocab << "\n";
      return 2;
    }
    const double ppl = evaluate_ppl(ck.model, encode(read_lines(corpus), vocab));
    out << "ppl=" << fixed4(ppl) << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << "\n";
    return 1;
  }
}

inline const std::vector<std::string>& sweep_keys() {
  static const std::vector<std::string> keys{"m_in", "m_out", "k_in", "k_out"};
  return keys;
}

// One training run per value of `vary`; child i gets seed
// derive_seed(seed, "sweep:<i>") and output directory <out>/<vary>_<value>.
// Writes <out>/sweep.csv with columns value,best_valid_ppl,test_ppl,params.
inline int cmd_sweep(const KeyValueConfig& kv, const std::string& vary, const std::vector<std::string>& values,
                     std::ostream& out, std::ostream& err) {
  if (std::find(sweep_keys().begin(), sweep_keys().end(), vary) == sweep_keys().end()) {
    err << "sweep: --vary must be one of m_in, m_out, k_in, k_out\n";
    return 1;
  }
  if (values.empty()) {
    err << "sweep: empty value list\n";
    return 1;
  }
  fs::path root;
  try {
    root = kv.require_string("out");
    fs::create_directories(root);
  } catch (const std::exception& e) {
    err << "sweep: " << e.what() << "\n";
    return 1;
  }
  const std::uint64_t master = kv.get_u64("seed", 1);
  std::string csv = "value,best_valid_ppl,test_ppl,params\n";
  int failures = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    KeyValueConfig child = kv;
    child.set(vary, values[i], "sweep");
    child.set("seed", std::to_string(derive_seed(master, "sweep:" + std::to_string(i))), "sweep");
    child.set("out", (root / (vary + "_" + values[i])).string(), "sweep");
    try {
      const TrainOutcome o = run_training(child, err);
      csv += values[i] + "," + format_double(o.best_valid_ppl) + "," + format_double(o.test_ppl) + "," +
             std::to_string(o.params) + "\n";
      out << vary << "=" << values[i] << " best_valid_ppl=" << fixed4(o.best_valid_ppl)
          << " test_ppl=" << fixed4(o.test_ppl) << "\n";
    } catch (const std::exception& e) {
      ++failures;
      csv += values[i] + ",nan,nan,0\n";
      err << "sweep: " << vary << "=" << values[i] << " failed: " << e.what() << "\n";
    }
  }
  try {
    write_text(root / "sweep.csv", csv);
  } catch (const std::exception& e) {
    err << "sweep: " << e.what() << "\n";
    return 1;
  }
  return failures == 0 ? 0 : 1;
}

inline int cmd_map_gen(std::size_t vocab, std::size_t parts, std::size_t pool, const std::string& scheme,
                       std::uint64_t seed, const std::string& path, std::ostream& out, std::ostream& err) {
  try {
    const SubVectorMapping m = build_mapping(parse_scheme(scheme), vocab, parts, pool, seed);
    save_mapping(m, path);
    out << "wrote " << path << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "map gen: " << e.what() << "\n";
    return 1;
  }
}

inline void describe_mapping(const SubVectorMapping& m, std::ostream& out) {
  const auto hist = usage_histogram(m);
  const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
  const double mean = static_cast<double>(m.vocab_size() * m.parts()) / static_cast<double>(m.pool_size());
  out << "V=" << m.vocab_size() << " K=" << m.parts() << " M=" << m.pool_size() << " scheme=" << to_string(m.scheme())
      << " seed=" << m.seed() << "\n";
  out << "usage min=" << *lo << " max=" << *hi << " mean=" << fixed4(mean) << "\n";
  out << "partition_valid=" << (has_partition_membership(m) ? "true" : "false") << "\n";
}

inline int cmd_map_inspect(const std::string& path, std::ostream& out, std::ostream& err) {
  try {
    describe_mapping(load_mapping(path), out);
    return 0;
  } catch (const std::exception& e) {
    err << "map inspect: " << e.what() << "\n";
    return 1;
  }
}

inline int cmd_bench(const BenchSpec& spec, const std::string& csv_path, std::ostream& out, std::ostream& err) {
  try {
    const BenchResult r = run_bench(spec);
    for (const auto& v : r.variants) {
      out << std::left << std::setw(16) << to_string(v.variant);
      if (!v.error.empty()) {
        out << "skipped: " << v.error << "\n";
        continue;
      }
      out << " median " << v.median_s << " s  mean " << v.mean_s << " s  min " << v.min_s << " s  flops "
          << v.flops() << "  param_bytes " << v.param_bytes << "  max_rel_dev " << v.max_rel_dev;
      if (v.variant == BenchVariant::SeDp)
        out << "  (step1 " << v.step1_median_s << " s, step2 " << v.step2_median_s << " s)";
      out << "\n";
    }
    if (!csv_path.empty()) emit_csv(r.variants, csv_path);
    return 0;
  } catch (const std::exception& e) {
    err << "bench: " << e.what() << "\n";
    return 1;
  }
}

inline int cmd_synth(const SyntheticCorpusSpec& spec, std::size_t train_tokens, std::size_t valid_tokens,
                     std::size_t test_tokens, const std::string& dir, std::ostream& out, std::ostream& err) {
  try {
    const auto s = make_synthetic_splits(spec, train_tokens, valid_tokens, test_tokens);
    fs::create_directories(dir);
    auto dump = [&](const std::vector<std::string>& lines, const char* name) {
      std::string text;
      for (const auto& l : lines) text += l + "\n";
      write_text(fs::path(dir) / name, text);
    };
    dump(s.train, "train.txt");
    dump(s.valid, "valid.txt");
    dump(s.test, "test.txt");
    out << "wrote " << dir << "/{train,valid,test}.txt\n";
    return 0;
  } catch (const std::exception& e) {
    err << "synth: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace slimlm::app
