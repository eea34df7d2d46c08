#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "msgt/concept_pool.hpp"
#include "msgt/rng.hpp"
#include "oracles.hpp"

using namespace msgt;
using namespace msgt::pool;
using io::EmbeddingTable;

namespace {

EmbeddingTable table(std::vector<std::string> names, std::initializer_list<std::initializer_list<double>> rows) {
  return EmbeddingTable(std::move(names), Tensor::from_rows(rows), true);
}

ScoredConcept scored(std::string name, double r) {
  ScoredConcept c;
  c.name = std::move(name);
  c.embedding = {1.0, 0.0};
  c.relevance = r;
  c.sigma = r;
  c.mu = 1.0;
  return c;
}

std::vector<std::string> names_of(const ConceptPool& p) { return p.names(); }

// Random unit candidates in a low dimension, with some rows perturbed copies
// of earlier ones so merges actually happen.
EmbeddingTable random_candidates(std::size_t n, std::size_t d, Rng& rng) {
  Tensor v = Tensor::matrix(n, d);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && rng.uniform() < 0.35) {
      const std::size_t src = rng.below(i);
      for (std::size_t j = 0; j < d; ++j) v(i, j) = v(src, j) + 0.15 * rng.normal();
    } else {
      for (std::size_t j = 0; j < d; ++j) v(i, j) = rng.normal();
    }
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += v(i, j) * v(i, j);
    for (std::size_t j = 0; j < d; ++j) v(i, j) /= std::sqrt(s);
    names.push_back("c" + std::to_string(rng.below(1000)) + "_" + std::to_string(i));
  }
  return EmbeddingTable(names, v, true);
}

}  // namespace

TEST(Dedup, IdenticalPairKeepsFirst) {
  auto t = table({"first", "second"}, {{0.6, 0.8}, {0.6, 0.8}});
  auto out = dedup(t, 0.99);
  EXPECT_EQ(out.names(), std::vector<std::string>{"first"});
}

TEST(Dedup, OrthogonalBothSurvive) {
  auto out = dedup(table({"a", "b"}, {{1, 0}, {0, 1}}), 0.1);
  EXPECT_EQ(out.names(), (std::vector<std::string>{"a", "b"}));
}

TEST(Dedup, ChainMergesTransitively) {
  const double z = std::sqrt(1.0 - 2 * 0.36);
  auto t = table({"a", "b", "c"}, {{1, 0, 0}, {0.6, 0.6, z}, {0, 1, 0}});
  auto out = dedup(t, 0.5);
  EXPECT_EQ(out.names(), std::vector<std::string>{"a"});
  auto oracle_out = oracle::pool_bruteforce(t, table({"y"}, {{1, 0, 0}}), 0.5, 0.0, 3);
  ASSERT_EQ(oracle_out.selected.size(), 1u);
  EXPECT_EQ(oracle_out.selected[0].name, "a");
}

TEST(Dedup, RejectsUnnormalizedInput) {
  EmbeddingTable raw({"a"}, Tensor::from_rows({{2.0, 0.0}}), false);
  EXPECT_THROW(dedup(raw, 0.5), std::invalid_argument);
  EmbeddingTable lying({"a"}, Tensor::from_rows({{2.0, 0.0}}), true);
  EXPECT_THROW(dedup(lying, 0.5), std::invalid_argument);
}

TEST(Dedup, Idempotent) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto cands = random_candidates(2 + rng.below(11), 3, rng);
    const double tau = rng.uniform(0.3, 0.95);
    auto once = dedup(cands, tau);
    auto twice = dedup(once, tau);
    EXPECT_EQ(once.names(), twice.names());
    EXPECT_EQ(once.vectors(), twice.vectors());
  }
}

TEST(Relevance, SingleLabelGivesZeroSigma) {
  auto cands = table({"a", "b"}, {{1, 0}, {0.6, 0.8}});
  for (const auto& c : relevance(cands, table({"y"}, {{0.6, 0.8}}), -1.0)) {
    EXPECT_EQ(c.sigma, 0.0);
    EXPECT_EQ(c.relevance, 0.0);
  }
}

TEST(Relevance, EqualSimilarities) {
  const std::vector<double> s{0.9, 0.9};
  auto r = relevance_from_similarities(s, 0.85);
  EXPECT_DOUBLE_EQ(r.mu, 0.9);
  EXPECT_EQ(r.sigma, 0.0);
  EXPECT_EQ(r.relevance, 0.0);
}

TEST(Relevance, HandCaseOneAndPointEight) {
  const std::vector<double> s{1.0, 0.8};
  auto r = relevance_from_similarities(s, 0.85);
  EXPECT_DOUBLE_EQ(r.mu, 0.9);
  EXPECT_NEAR(r.sigma, 0.1, 1e-15);
  EXPECT_EQ(r.relevance, r.sigma);

  // Same case through embeddings: c = e1, labels e1 and (0.8, 0.6).
  auto out = relevance(table({"c"}, {{1, 0}}), table({"y1", "y2"}, {{1, 0}, {0.8, 0.6}}), 0.85);
  EXPECT_NEAR(out[0].relevance, 0.1, 1e-15);
}

TEST(Relevance, BelowThresholdIsZero) {
  const std::vector<double> s{0.5, 0.1};
  EXPECT_EQ(relevance_from_similarities(s, 0.85).relevance, 0.0);
}

TEST(Relevance, LabelOrderInvariant) {
  Rng rng(3);
  auto cands = random_candidates(6, 4, rng);
  auto labels = random_candidates(4, 4, rng);
  auto a = relevance(cands, labels, -0.2);
  Tensor rev = Tensor::matrix(4, 4);
  std::vector<std::string> rev_names;
  for (std::size_t i = 0; i < 4; ++i) {
    rev_names.push_back(labels.names()[3 - i]);
    for (std::size_t j = 0; j < 4; ++j) rev(i, j) = labels.vectors()(3 - i, j);
  }
  auto b = relevance(cands, EmbeddingTable(rev_names, rev, true), -0.2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].mu, b[i].mu, 1e-15);
    EXPECT_NEAR(a[i].sigma, b[i].sigma, 1e-15);
  }
}

TEST(Relevance, DimensionMismatch) {
  EXPECT_THROW(relevance(table({"a"}, {{1, 0}}), table({"y"}, {{1, 0, 0}}), 0.5), std::invalid_argument);
}

TEST(SelectTopK, SaturatesWholeList) {
  auto p = select_top_k({scored("a", 0.1), scored("b", 0.3)}, 5);
  EXPECT_EQ(names_of(p), (std::vector<std::string>{"b", "a"}));
}

TEST(SelectTopK, PicksMax) {
  auto p = select_top_k({scored("a", 0.2), scored("b", 0.3)}, 1);
  EXPECT_EQ(names_of(p), std::vector<std::string>{"b"});
  EXPECT_TRUE(p.warnings.empty());
}

TEST(SelectTopK, TiesBrokenByName) {
  auto p = select_top_k({scored("c", 0.1), scored("b", 0.2), scored("a", 0.2)}, 2);
  EXPECT_EQ(names_of(p), (std::vector<std::string>{"a", "b"}));
}

TEST(SelectTopK, ZeroRelevanceFillsWithWarning) {
  auto p = select_top_k({scored("a", 0.0), scored("b", 0.4), scored("c", 0.0)}, 3);
  EXPECT_EQ(names_of(p), (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(p.warnings.size(), 1u);
}

TEST(SelectTopK, Errors) {
  EXPECT_THROW(select_top_k({}, 2), std::invalid_argument);
  EXPECT_THROW(select_top_k({scored("a", 0.1)}, 0), std::invalid_argument);
}

TEST(Pipeline, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(12), d = 2 + rng.below(3);
    auto cands = random_candidates(n, d, rng);
    auto labels = random_candidates(1 + rng.below(4), d, rng);
    const double tau_c = rng.uniform(0.0, 1.0), tau_r = rng.uniform(-0.5, 0.5);
    const std::size_t k = 1 + rng.below(n + 2);
    auto pool = build_pool(cands, labels, tau_c, tau_r, k);
    auto expect = oracle::pool_bruteforce(cands, labels, tau_c, tau_r, k);
    ASSERT_EQ(pool.size(), expect.selected.size()) << "trial " << trial;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      EXPECT_EQ(pool.concepts[i].name, expect.selected[i].name);
      EXPECT_EQ(pool.concepts[i].mu, expect.selected[i].mu);
      EXPECT_EQ(pool.concepts[i].sigma, expect.selected[i].sigma);
      EXPECT_EQ(pool.concepts[i].relevance, expect.selected[i].relevance);
      double norm = 0.0;
      for (double x : pool.concepts[i].embedding) norm += x * x;
      EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-9);
    }
    EXPECT_EQ(!pool.warnings.empty(), expect.warned);
    if (labels.size() == 1) {
      for (const auto& c : pool.concepts) EXPECT_EQ(c.relevance, 0.0);
    }
  }
}

TEST(PoolJson, RoundTrip) {
  Rng rng(5);
  auto pool = build_pool(random_candidates(8, 4, rng), random_candidates(3, 4, rng), 0.8, -0.1, 4);
  auto back = pool_from_json(pool_to_json(pool));
  ASSERT_EQ(back.size(), pool.size());
  EXPECT_EQ(back.tau_c, pool.tau_c);
  EXPECT_EQ(back.k, pool.k);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(back.concepts[i].name, pool.concepts[i].name);
    EXPECT_EQ(back.concepts[i].relevance, pool.concepts[i].relevance);
    // stored as float32, renormalized in double on load
    double norm = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(back.concepts[i].embedding[j], pool.concepts[i].embedding[j], 1e-6);
      norm += back.concepts[i].embedding[j] * back.concepts[i].embedding[j];
    }
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
}

TEST(Base64, Float32RoundTrip) {
  const std::vector<double> v{0.0, -1.5, 3.25, 1e-3};
  auto back = decode_float32_base64(encode_float32_base64(v));
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(v[i])));
  EXPECT_EQ(encode_float32_base64(std::vector<double>{1.0}), "AACAPw==");
  EXPECT_THROW(decode_float32_base64("!!!"), std::runtime_error);
}
