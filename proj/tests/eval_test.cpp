#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mimco/eval.hpp"
#include "support/oracles.hpp"
#include "support/toy.hpp"

using namespace mimco;
using namespace mimco::testing;

namespace {

EmbeddingSet random_set(std::size_t rows, std::size_t dim, std::size_t classes, std::mt19937_64& rng) {
  EmbeddingSet e;
  e.dim = dim;
  std::normal_distribution<float> nd(0, 1);
  for (std::size_t i = 0; i < rows * dim; ++i) e.data.push_back(nd(rng));
  for (std::size_t i = 0; i < rows; ++i) e.labels.push_back(rng() % classes);
  return e;
}

Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.num_classes = 4;
  for (std::size_t i = 0; i < n; ++i) {
    d.images.push_back(random_image(16, 3, rng));
    d.labels.push_back(i % 4);
  }
  return d;
}

}  // namespace

TEST(Knn, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto q = random_set(100, 8, 5, rng), idx = random_set(100, 8, 5, rng);
    EXPECT_EQ(knn_recall_at_1(q, idx), oracle_recall(q, idx));
    EXPECT_EQ(knn_recall_at_1(q, idx, Metric::kL2), oracle_recall(q, idx, Metric::kL2));
  }
}

TEST(Knn, ExactCopiesGiveOne) {
  std::mt19937_64 rng(2);
  const auto q = random_set(30, 6, 4, rng);
  EXPECT_EQ(knn_recall_at_1(q, q), 1.0);
  EXPECT_EQ(knn_recall_at_1(q, q, Metric::kL2), 1.0);
}

TEST(Knn, SingleClassGivesOne) {
  std::mt19937_64 rng(3);
  auto q = random_set(20, 4, 1, rng), idx = random_set(15, 4, 1, rng);
  EXPECT_EQ(knn_recall_at_1(q, idx), 1.0);
}

TEST(Knn, ScaleInvariant) {
  std::mt19937_64 rng(4);
  const auto q = random_set(50, 8, 3, rng), idx = random_set(60, 8, 3, rng);
  auto qs = q, is = idx;
  for (auto& v : qs.data) v *= 7.3f;
  for (auto& v : is.data) v *= 7.3f;
  EXPECT_EQ(knn_recall_at_1(qs, is), knn_recall_at_1(q, idx));
}

TEST(Knn, TiesGoToLowestIndex) {
  EmbeddingSet q{2, {1, 0}, {0}};
  EmbeddingSet idx{2, {2, 0, 1, 0}, {0, 1}};
  EXPECT_EQ(knn_recall_at_1(q, idx), 1.0);
  idx.labels = {1, 0};
  EXPECT_EQ(knn_recall_at_1(q, idx), 0.0);
}

TEST(Knn, ZeroNormNamesRow) {
  EmbeddingSet q{2, {1, 0, 0, 0}, {0, 1}};
  EmbeddingSet idx{2, {1, 1}, {0}};
  try {
    knn_recall_at_1(q, idx);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("query embedding at row 1"), std::string::npos) << e.what();
  }
}

TEST(Accuracy, ZeroHeadPicksClassZero) {
  auto cfg = toy_config();
  ModelParams<float> p(cfg);  // all-zero weights
  const auto d = toy_dataset(20, 5);
  const auto out = run_model(p, d);
  const double freq0 = double(std::count(d.labels.begin(), d.labels.end(), 0u)) / d.size();
  EXPECT_EQ(accuracy(out.logits, out.num_classes, d.labels), freq0);
}

TEST(Accuracy, PerfectLogits) {
  const std::vector<float> logits = {0, 5, 1, 3, 0, 0};
  const std::vector<std::size_t> labels = {1, 0};
  EXPECT_EQ(accuracy(logits, 3, labels), 1.0);
}

TEST(Embed, DuplicatesIdenticalAndFinite) {
  const auto cfg = toy_config();
  const auto p = rough_params(cfg, 6).cast<float>();
  auto d = toy_dataset(10, 7);
  d.images[7] = d.images[2];
  const auto out = run_model(p, d);
  EXPECT_EQ(out.features.dim, cfg.encoder.dim);
  const auto a = out.features.row(2), b = out.features.row(7);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  for (float v : out.features.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Embed, OrderInvariant) {
  const auto cfg = toy_config();
  const auto p = rough_params(cfg, 8).cast<float>();
  const auto d = toy_dataset(12, 9);
  Dataset shuffled = d;
  std::vector<std::size_t> perm = {5, 11, 0, 3, 8, 1, 9, 2, 10, 4, 7, 6};
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.images[i] = d.images[perm[i]];
    shuffled.labels[i] = d.labels[perm[i]];
  }
  const auto a = run_model(p, d, 5), b = run_model(p, shuffled, 5);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < cfg.encoder.dim; ++k)
      EXPECT_NEAR(b.features.row(i)[k], a.features.row(perm[i])[k], 1e-5);
}

TEST(Evaluate, ReportFields) {
  const auto cfg = toy_config();
  const auto p = rough_params(cfg, 10).cast<float>();
  const auto q = toy_dataset(8, 11), idx = toy_dataset(16, 12);
  const auto rep = evaluate(p, q, idx);
  EXPECT_EQ(rep.n_query, 8u);
  EXPECT_EQ(rep.n_index, 16u);
  const nlohmann::json j = rep;
  for (const char* k : {"accuracy", "recall_at_1", "n_query", "n_index", "checkpoint"}) EXPECT_TRUE(j.contains(k)) << k;
}
