#include <gtest/gtest.h>

#include "slimlm/embedding.hpp"

using namespace slimlm;

namespace {

EmbeddingPool random_pool(std::size_t m, std::size_t d, std::uint64_t seed) {
  EmbeddingPool pool(m, d);
  SplitMix64 rng(seed);
  for (Eigen::Index r = 0; r < pool.data.rows(); ++r)
    for (Eigen::Index c = 0; c < pool.data.cols(); ++c) pool.data(r, c) = rng.uniform(-1, 1);
  return pool;
}

Vector random_vector(Eigen::Index n, SplitMix64& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST(EmbedForward, ZeroPoolGivesZero) {
  const auto m = build_balanced_mapping(10, 4, 12, 1);
  EmbeddingPool pool(12, 3);
  EXPECT_TRUE(embed_forward(pool, m, 7).isZero(0.0));
  EXPECT_EQ(embed_forward(pool, m, 7).size(), 12);
}

TEST(EmbedForward, ToyWordFourIsRowThreeThenRowOne) {
  const auto m = SubVectorMapping::from_table(4, 2, 3, Scheme::Balanced, 0, {0, 1, 0, 2, 1, 2, 2, 0});
  const auto pool = random_pool(3, 2, 5);
  const Vector e = embed_forward(pool, m, 3);
  EXPECT_EQ(e[0], pool.data(2, 0));
  EXPECT_EQ(e[1], pool.data(2, 1));
  EXPECT_EQ(e[2], pool.data(0, 0));
  EXPECT_EQ(e[3], pool.data(0, 1));
}

TEST(EmbedForward, MatchesManualGather) {
  const auto m = build_balanced_mapping(40, 5, 23, 9);
  const auto pool = random_pool(23, 4, 10);
  for (std::size_t w = 0; w < 40; ++w) {
    const Vector e = embed_forward(pool, m, w);
    for (std::size_t p = 0; p < 5; ++p)
      for (std::size_t j = 0; j < 4; ++j) ASSERT_EQ(e[static_cast<Eigen::Index>(p * 4 + j)], pool.data(m.at(w, p), j));
  }
}

TEST(EmbedForward, Errors) {
  const auto m = build_balanced_mapping(10, 2, 5, 1);
  EmbeddingPool pool(5, 3);
  EXPECT_THROW(embed_forward(pool, m, 10), std::out_of_range);
  EmbeddingPool wrong(4, 3);
  EXPECT_THROW(embed_forward(wrong, m, 0), std::invalid_argument);
}

TEST(EmbedBackward, ZeroUpstreamLeavesGradient) {
  const auto m = build_balanced_mapping(10, 2, 5, 1);
  EmbeddingPool pool(5, 3);
  PoolGradient g(pool);
  embed_backward(g, m, 4, Vector::Zero(6));
  EXPECT_TRUE(g.data.isZero(0.0));
}

TEST(EmbedBackward, SharedRowAccumulates) {
  // Words 0 and 1 share row 0 at position 0.
  const auto m = SubVectorMapping::from_table(2, 2, 4, Scheme::Partitioned, 0, {0, 2, 0, 3});
  EmbeddingPool pool(4, 2);
  PoolGradient g(pool);
  Vector g1(4), g2(4);
  g1 << 1, 2, 3, 4;
  g2 << 10, 20, 30, 40;
  embed_backward(g, m, 0, g1);
  embed_backward(g, m, 1, g2);
  EXPECT_EQ(g.data(0, 0), 11);
  EXPECT_EQ(g.data(0, 1), 22);
  EXPECT_EQ(g.data(2, 0), 3);
  EXPECT_EQ(g.data(3, 1), 40);
  EXPECT_EQ(g.data(1, 0), 0);
}

TEST(EmbedBackward, Locality) {
  const auto m = build_balanced_mapping(30, 3, 20, 2);
  EmbeddingPool pool(20, 2);
  PoolGradient g(pool);
  embed_backward(g, m, 11, Vector::Ones(6));
  const auto row = m.row(11);
  for (Eigen::Index r = 0; r < 20; ++r) {
    const bool named = std::find(row.begin(), row.end(), static_cast<PoolIndex>(r)) != row.end();
    EXPECT_EQ(g.data.row(r).isZero(0.0), !named) << r;
  }
}

TEST(EmbedBackward, MatchesFiniteDifferences) {
  // Loss = sum over a batch of words of u_b . embed(w_b).
  const auto m = build_balanced_mapping(15, 3, 10, 4);
  auto pool = random_pool(10, 2, 6);
  SplitMix64 rng(7);
  const std::vector<std::size_t> words{1, 4, 4, 9, 14};
  std::vector<Vector> up;
  for (std::size_t i = 0; i < words.size(); ++i) up.push_back(random_vector(6, rng));
  auto loss = [&](const EmbeddingPool& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < words.size(); ++i) s += up[i].dot(embed_forward(p, m, words[i]));
    return s;
  };
  PoolGradient g(pool);
  for (std::size_t i = 0; i < words.size(); ++i) embed_backward(g, m, words[i], up[i]);
  const double h = 1e-5;
  for (Eigen::Index r = 0; r < 10; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) {
      const double orig = pool.data(r, c);
      pool.data(r, c) = orig + h;
      const double lp = loss(pool);
      pool.data(r, c) = orig - h;
      const double lm = loss(pool);
      pool.data(r, c) = orig;
      const double fd = (lp - lm) / (2 * h);
      EXPECT_NEAR(fd, g.data(r, c), 1e-7 * std::max(1.0, std::abs(fd)));
    }
}

TEST(EmbedBackward, Errors) {
  const auto m = build_balanced_mapping(10, 2, 5, 1);
  EmbeddingPool pool(5, 3);
  PoolGradient g(pool);
  EXPECT_THROW(embed_backward(g, m, 10, Vector::Zero(6)), std::out_of_range);
  EXPECT_THROW(embed_backward(g, m, 0, Vector::Zero(5)), std::invalid_argument);
}

TEST(SlimEmbedding, BijectiveMappingReproducesAnyMatrix) {
  const std::size_t V = 12, K = 3, d = 2;
  const auto m = build_balanced_mapping(V, K, K * V, 31);
  SplitMix64 rng(8);
  Matrix target(V, K * d);
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.uniform(-1, 1);
  // Place each word's slices into the rows the mapping names.
  EmbeddingPool pool(K * V, d);
  for (std::size_t w = 0; w < V; ++w)
    for (std::size_t p = 0; p < K; ++p)
      pool.data.row(m.at(w, p)) = target.row(static_cast<Eigen::Index>(w)).segment(static_cast<Eigen::Index>(p * d), d);
  for (std::size_t w = 0; w < V; ++w)
    EXPECT_EQ(embed_forward(pool, m, w), target.row(static_cast<Eigen::Index>(w)).transpose());
}

TEST(ParamCount, ToyRatio) {
  const auto pc = param_count(4, 8, 2, 3);
  EXPECT_DOUBLE_EQ(pc.ratio, 0.375);
  EXPECT_EQ(pc.compressed, 12u);
  EXPECT_EQ(pc.uncompressed, 32u);
}

TEST(ParamCount, NoCompression) { EXPECT_DOUBLE_EQ(param_count(50, 12, 4, 200).ratio, 1.0); }

TEST(ParamCount, TenPercentSetting) {
  const auto pc = param_count(10000, 300, 10, 10000);
  EXPECT_EQ(pc.compressed, 300000u);
  EXPECT_EQ(pc.uncompressed, 3000000u);
  EXPECT_DOUBLE_EQ(pc.ratio, 0.1);
}

TEST(ParamCount, RejectsNonDividingK) { EXPECT_THROW(param_count(10, 10, 3, 5), std::invalid_argument); }
