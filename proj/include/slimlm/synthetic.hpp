#pragma once

// Deterministic synthetic text for desk-scale experiments.
//
// Sentences come from a class-based Markov source: each word belongs to one
// of `classes` latent classes, the next class depends on the current one
// (each class has `fanout` weighted successors), and words are emitted from
// their class with Zipfian frequencies. Predicting the next word therefore
// requires knowing the current word's identity, not just its frequency.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slimlm/random.hpp"

namespace slimlm {

struct SyntheticCorpusSpec {
  std::size_t classes = 40;
  std::size_t words_per_class = 25;
  std::size_t fanout = 4;
  double mean_sentence_length = 12.0;
  std::uint64_t seed = 2017;
};

class SyntheticSource {
 public:
  explicit SyntheticSource(const SyntheticCorpusSpec& spec) : spec_(spec), rng_(spec.seed) {
    SplitMix64 structure(derive_seed(spec.seed, "structure"));
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::vector<std::size_t> next;
      std::vector<double> cdf;
      double total = 0.0;
      for (std::size_t j = 0; j < spec.fanout; ++j) {
        next.push_back(static_cast<std::size_t>(structure.below(spec.classes)));
        total += 0.2 + structure.uniform();
        cdf.push_back(total);
      }
      for (double& v : cdf) v /= total;
      successors_.push_back(std::move(next));
      successor_cdf_.push_back(std::move(cdf));
    }
    double total = 0.0;
    for (std::size_t j = 0; j < spec.words_per_class; ++j) {
      total += 1.0 / static_cast<double>(j + 1);
      emission_cdf_.push_back(total);
    }
    for (double& v : emission_cdf_) v /= total;
  }

  static std::string word_name(std::size_t cls, std::size_t idx) {
    return "c" + std::to_string(cls) + "w" + std::to_string(idx);
  }

  std::string sentence() {
    std::string line;
    std::size_t cls = static_cast<std::size_t>(rng_.below(spec_.classes));
    const double stop = 1.0 / spec_.mean_sentence_length;
    for (std::size_t len = 0;; ++len) {
      if (len) line += ' ';
      line += word_name(cls, draw(emission_cdf_));
      if (len >= 2 && rng_.uniform() < stop) break;
      cls = successors_[cls][draw(successor_cdf_[cls])];
    }
    return line;
  }

  // Whole sentences until at least `tokens` tokens (including one <eos> per
  // line) have been produced.
  std::vector<std::string> lines(std::size_t tokens) {
    std::vector<std::string> out;
    std::size_t produced = 0;
    while (produced < tokens) {
      out.push_back(sentence());
      std::size_t words = 1;
      for (char ch : out.back()) words += ch == ' ';
      produced += words + 1;
    }
    return out;
  }

 private:
  std::size_t draw(const std::vector<double>& cdf) {
    const double u = rng_.uniform();
    std::size_t i = 0;
    while (i + 1 < cdf.size() && u >= cdf[i]) ++i;
    return i;
  }

  SyntheticCorpusSpec spec_;
  SplitMix64 rng_;
  std::vector<std::vector<std::size_t>> successors_;
  std::vector<std::vector<double>> successor_cdf_;
  std::vector<double> emission_cdf_;
};

struct SyntheticSplits {
  std::vector<std::string> train, valid, test;
};

inline SyntheticSplits make_synthetic_splits(const SyntheticCorpusSpec& spec, std::size_t train_tokens,
                                             std::size_t valid_tokens, std::size_t test_tokens) {
  SyntheticSource src(spec);
  SyntheticSplits s;
  s.train = src.lines(train_tokens);
  s.valid = src.lines(valid_tokens);
  s.test = src.lines(test_tokens);
  return s;
}

}  // namespace slimlm
