// slimlm: train, evaluate and benchmark LSTM language models with shared
// sub-vector embeddings.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

struct OverrideFlag {
  const char* flag;
  const char* key;
  const char* help;
};

// Command-line spellings of config keys. Values are kept as strings and
// validated by the same parser that reads config files.
const std::vector<OverrideFlag> kOverrides{
    {"--train", "train", "training corpus (one sentence per line)"},
    {"--valid", "valid", "validation corpus"},
    {"--test", "test", "test corpus"},
    {"--out", "out", "output directory"},
    {"--seed", "seed", "master seed"},
    {"--layers", "layers", "LSTM layers"},
    {"--hidden", "hidden", "hidden width (also the embedding width)"},
    {"--scheme-in", "scheme_in", "input sharing: dense|balanced|partitioned|hashed"},
    {"--k-in", "k_in", "input sub-vectors per word"},
    {"--m-in", "m_in", "input pool size"},
    {"--ratio-in", "ratio_in", "input pool size as a fraction of K*V"},
    {"--scheme-out", "scheme_out", "output sharing: dense|partitioned|hashed"},
    {"--k-out", "k_out", "output sub-vectors per word"},
    {"--m-out", "m_out", "output pool size"},
    {"--ratio-out", "ratio_out", "output pool size as a fraction of K*V"},
    {"--loss", "loss", "full|nce"},
    {"--nce-k", "nce_k", "noise samples per target"},
    {"--nce-norm", "nce_norm", "NCE partition function: vocab (Z = V) or one (Z = 1)"},
    {"--optimizer", "optimizer", "sgd|adagrad"},
    {"--lr", "lr", "learning rate"},
    {"--lr-decay", "lr_decay", "SGD decay factor on a non-improving epoch"},
    {"--clip", "clip", "global gradient-norm clip"},
    {"--batch", "batch", "minibatch size"},
    {"--bptt", "bptt", "truncated BPTT length"},
    {"--max-epochs", "max_epochs", "training epochs"},
    {"--dropout", "dropout", "dropout between layers and before the output"},
    {"--dropout-embed", "dropout_embed", "dropout on the embedding"},
    {"--max-vocab", "max_vocab", "keep at most this many regular words (0 = all)"},
    {"--min-count", "min_count", "fold rarer words into <unk>"},
};

struct TrainOptions {
  std::string config;
  std::vector<std::string> values = std::vector<std::string>(kOverrides.size());
};

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  for (std::size_t i = 0; i < kOverrides.size(); ++i) cmd->add_option(kOverrides[i].flag, o.values[i], kOverrides[i].help);
}

slimlm::KeyValueConfig gather(CLI::App* cmd, const TrainOptions& o) {
  slimlm::KeyValueConfig kv;
  if (!o.config.empty()) kv = slimlm::KeyValueConfig::load(o.config);
  for (std::size_t i = 0; i < kOverrides.size(); ++i)
    if (cmd->count(kOverrides[i].flag) > 0) kv.set(kOverrides[i].key, o.values[i], kOverrides[i].flag);
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slimlm: LSTM language models with shared sub-vector embeddings"};
  app.require_subcommand(1);

  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "train a model");
  add_train_options(train, train_opts);

  std::string ckpt, corpus, vocab;
  bool force = false;
  auto* eval = app.add_subcommand("eval", "report perplexity of a checkpoint on a corpus");
  eval->add_option("--checkpoint", ckpt, "model.ckpt from a training run")->required();
  eval->add_option("--corpus", corpus, "text to score")->required();
  eval->add_option("--vocab", vocab, "vocabulary file (default: vocab.txt next to the checkpoint)");
  eval->add_flag("--force", force, "evaluate even if the vocabulary hash differs");

  TrainOptions sweep_opts;
  std::string vary;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "train one model per value of a sharing parameter");
  add_train_options(sweep, sweep_opts);
  sweep->add_option("--vary", vary, "m_in|m_out|k_in|k_out")->required();
  sweep->add_option("--values", values, "values to try")->required()->delimiter(',');

  slimlm::BenchSpec bench_spec;
  std::vector<std::string> variants;
  std::string bench_csv;
  auto* bench = app.add_subcommand("bench", "time output-layer logit computation");
  bench->add_option("--vocab", bench_spec.vocab, "V")->capture_default_str();
  bench->add_option("--hidden", bench_spec.hidden, "H")->capture_default_str();
  bench->add_option("--parts", bench_spec.parts, "K")->capture_default_str();
  bench->add_option("--pool", bench_spec.pool, "M")->capture_default_str();
  bench->add_option("--tokens", bench_spec.tokens, "hidden vectors per minibatch")->capture_default_str();
  bench->add_option("--reps", bench_spec.repetitions, "timed repetitions")->capture_default_str();
  bench->add_option("--warmup", bench_spec.warmup, "untimed repetitions")->capture_default_str();
  bench->add_option("--seed", bench_spec.seed, "seed")->capture_default_str();
  bench->add_option("--variants", variants, "dense,hash_on_the_fly,se_dp")->delimiter(',');
  bench->add_option("--csv", bench_csv, "write results as CSV");

  auto* map = app.add_subcommand("map", "generate or inspect mapping files");
  map->require_subcommand(1);
  std::size_t map_v = 0, map_k = 1, map_m = 0;
  std::string map_scheme = "balanced", map_out, map_path;
  std::uint64_t map_seed = 1;
  auto* map_gen = map->add_subcommand("gen", "write a mapping file");
  map_gen->add_option("--vocab", map_v, "V")->required();
  map_gen->add_option("--parts", map_k, "K")->required();
  map_gen->add_option("--pool", map_m, "M")->required();
  map_gen->add_option("--scheme", map_scheme, "balanced|partitioned|hashed")->capture_default_str();
  map_gen->add_option("--seed", map_seed, "seed")->capture_default_str();
  map_gen->add_option("--out", map_out, "output file")->required();
  auto* map_inspect = map->add_subcommand("inspect", "print summary statistics of a mapping file");
  map_inspect->add_option("path", map_path, "mapping file")->required();

  slimlm::SyntheticCorpusSpec synth_spec;
  std::size_t synth_train = 200000, synth_valid = 20000, synth_test = 20000;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic class-Markov corpus");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", synth_spec.classes, "latent classes")->capture_default_str();
  synth->add_option("--words-per-class", synth_spec.words_per_class, "words per class")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "seed")->capture_default_str();
  synth->add_option("--train-tokens", synth_train, "training tokens")->capture_default_str();
  synth->add_option("--valid-tokens", synth_valid, "validation tokens")->capture_default_str();
  synth->add_option("--test-tokens", synth_test, "test tokens")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return slimlm::app::cmd_train(gather(train, train_opts), std::cout, std::cerr);
    if (*sweep) return slimlm::app::cmd_sweep(gather(sweep, sweep_opts), vary, values, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  if (*eval) return slimlm::app::cmd_eval(ckpt, corpus, vocab, force, std::cout, std::cerr);
  if (*bench) {
    if (!variants.empty()) {
      bench_spec.variants.clear();
      try {
        for (const auto& v : variants) bench_spec.variants.push_back(slimlm::parse_variant(v));
      } catch (const std::exception& e) {
        std::cerr << "bench: " << e.what() << "\n";
        return 1;
      }
    }
    return slimlm::app::cmd_bench(bench_spec, bench_csv, std::cout, std::cerr);
  }
  if (*map_gen)
    return slimlm::app::cmd_map_gen(map_v, map_k, map_m, map_scheme, map_seed, map_out, std::cout, std::cerr);
  if (*map_inspect) return slimlm::app::cmd_map_inspect(map_path, std::cout, std::cerr);
  if (*synth)
    return slimlm::app::cmd_synth(synth_spec, synth_train, synth_valid, synth_test, synth_out, std::cout, std::cerr);
  return 1;
}
