#include <gtest/gtest.h>

#include <cmath>

#include "dq/datasets.hpp"
#include "dq/degree_quant.hpp"
#include "dq/error.hpp"

using namespace dq;

TEST(ProbMask, HandExample) {
  const std::vector<Index> deg{0, 1, 1, 2};
  const auto p = build_prob_mask(deg, 0.0f, 0.2f);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_NEAR(p[0], 0.05f, 1e-7f);
  EXPECT_NEAR(p[1], 0.15f, 1e-7f);
  EXPECT_NEAR(p[2], 0.15f, 1e-7f);
  EXPECT_EQ(p[3], 0.2f);
}

TEST(ProbMask, DegenerateRange) {
  const std::vector<Index> deg{0, 3, 1, 7, 7, 2};
  for (float q : {0.0f, 0.1f, 1.0f}) {
    for (float v : build_prob_mask(deg, q, q)) EXPECT_EQ(v, q);
  }
}

TEST(ProbMask, RegularGraphGetsPMax) {
  const std::vector<Index> deg(50, 4);
  for (float v : build_prob_mask(deg, 0.0f, 0.1f)) EXPECT_EQ(v, 0.1f);
}

TEST(ProbMask, RejectsBadRange) {
  const std::vector<Index> deg{1, 2};
  EXPECT_THROW(build_prob_mask(deg, 0.3f, 0.1f), ConfigError);
  EXPECT_THROW(build_prob_mask(deg, -0.1f, 0.1f), ConfigError);
  EXPECT_THROW(build_prob_mask(deg, 0.0f, 1.5f), ConfigError);
  EXPECT_TRUE(build_prob_mask({}, 0.0f, 0.1f).empty());
}

TEST(ProbMask, MonotoneInDegreeAndBounded) {
  const Graph g = gen_synthetic(SyntheticKind::preferential_attachment, 2000, 3, 11);
  const auto p = build_prob_mask(g.in_degree, 0.05f, 0.3f);
  Index max_degree = 0;
  for (Index d : g.in_degree) max_degree = std::max(max_degree, d);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_GE(p[i], 0.05f);
    EXPECT_LE(p[i], 0.3f);
    if (g.in_degree[i] == max_degree) EXPECT_EQ(p[i], 0.3f);
  }
  for (std::size_t i = 0; i < p.size(); i += 7) {
    for (std::size_t j = 0; j < p.size(); j += 13) {
      if (g.in_degree[i] > g.in_degree[j]) EXPECT_GE(p[i], p[j]);
      if (g.in_degree[i] == g.in_degree[j]) EXPECT_EQ(p[i], p[j]);
    }
  }
}

TEST(ProbMask, AttachToGraph) {
  Graph g = gen_synthetic(SyntheticKind::star, 9, 0, 1);
  attach_prob_mask(g, 0.0f, 0.2f);
  ASSERT_EQ(g.prob_mask.size(), 9u);
  EXPECT_EQ(g.prob_mask[0], 0.2f);
  EXPECT_NO_THROW(g.validate());
}

TEST(ProbMask, BatchedCorporaUsePerGraphDistributions) {
  const Graph a = gen_synthetic(SyntheticKind::star, 5, 0, 1);
  const Graph b = gen_synthetic(SyntheticKind::preferential_attachment, 40, 2, 2);
  const std::vector<Graph> graphs{a, b};
  GraphBatch batch = make_batch(graphs);
  attach_prob_mask(batch, 0.0f, 0.2f);
  const auto pa = build_prob_mask(a.in_degree, 0.0f, 0.2f);
  const auto pb = build_prob_mask(b.in_degree, 0.0f, 0.2f);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(batch.merged.prob_mask[i], pa[i]);
  for (std::size_t i = 0; i < pb.size(); ++i) EXPECT_EQ(batch.merged.prob_mask[pa.size() + i], pb[i]);
}

TEST(SampleMask, Extremes) {
  Rng rng(3);
  const std::vector<float> zeros(1000, 0.0f), ones(1000, 1.0f);
  for (auto m : sample_mask(zeros, rng)) EXPECT_EQ(m, 0);
  for (auto m : sample_mask(ones, rng)) EXPECT_EQ(m, 1);
}

TEST(SampleMask, BinomialFraction) {
  Rng rng(4);
  const std::vector<float> p(10000, 0.3f);
  const auto m = sample_mask(p, rng);
  double hits = 0;
  for (auto v : m) hits += v;
  EXPECT_NEAR(hits / 10000.0, 0.3, 0.02);
}

TEST(SampleMask, DeterministicGivenSeed) {
  const std::vector<float> p(500, 0.4f);
  Rng a(9), b(9);
  EXPECT_EQ(sample_mask(p, a), sample_mask(p, b));
}

TEST(SampleMask, PerNodeFrequencyWithinThreeSigma) {
  const std::vector<Index> deg{0, 1, 1, 2, 3, 3, 3, 8};
  const auto p = build_prob_mask(deg, 0.1f, 0.9f);
  Rng rng(12);
  std::vector<int> hits(p.size(), 0);
  const int samples = 10000;
  for (int s = 0; s < samples; ++s) {
    const auto m = sample_mask(p, rng);
    for (std::size_t i = 0; i < m.size(); ++i) hits[i] += m[i];
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double sigma = std::sqrt(p[i] * (1.0 - p[i]) / samples);
    EXPECT_NEAR(hits[i] / static_cast<double>(samples), p[i], 3.0 * sigma + 1e-9) << i;
  }
}
