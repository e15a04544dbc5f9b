#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mimco/tensor.hpp"

using namespace mimco;

namespace {

std::vector<double> values(const Var<double>& v) { return {v.value().begin(), v.value().end()}; }

}  // namespace

TEST(Tensor, MatmulHandExample) {
  Tape<double> t;
  auto a = t.constant({2, 2}, {1, 2, 3, 4});
  auto b = t.constant({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Tensor, MatmulIdentity) {
  Tape<double> t;
  std::vector<double> av = {1.5, -2, 3, 0.25, 7, -1};
  auto a = t.constant({2, 3}, av);
  auto eye = t.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(values(matmul(a, eye)), av);
}

TEST(Tensor, MatmulShapeMismatch) {
  Tape<double> t;
  auto a = t.constant({2, 3}, std::vector<double>(6));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, LayerNormConstantRowIsZero) {
  Tape<double> t;
  auto x = t.constant({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
  auto g = t.constant({4}, {1, 1, 1, 1});
  auto b = t.constant({4}, {0, 0, 0, 0});
  for (double v : values(layer_norm(x, g, b, 1e-6))) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, LayerNormTwoValues) {
  Tape<double> t;
  auto y = layer_norm(t.constant({1, 2}, {1, 3}), t.constant({2}, {1, 1}), t.constant({2}, {0, 0}), 1e-12);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-9);
}

TEST(Tensor, SigmoidAtZero) {
  Tape<double> t;
  EXPECT_EQ(sigmoid(t.constant({1}, {0.0})).value()[0], 0.5);
}

TEST(Tensor, AddZerosIsIdentity) {
  Tape<double> t;
  std::vector<double> xv = {1, -2, 3.5};
  EXPECT_EQ(values(add(t.constant({3}, xv), t.constant({3}, {0, 0, 0}))), xv);
}

TEST(Tensor, SoftmaxUniformRow) {
  Tape<double> t;
  for (double v : values(softmax_rows(t.constant({1, 5}, std::vector<double>(5, 2.5))))) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Tensor, SoftmaxLargeLogitsDoNotOverflow) {
  Tape<float> t;
  auto y = softmax_rows(t.constant({1, 2}, {1000.f, 0.f}));
  EXPECT_EQ(y.value()[0], 1.0f);
  EXPECT_EQ(y.value()[1], 0.0f);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(4);
  for (float mag : {1.f, 1e2f, 1e4f}) {
    std::uniform_real_distribution<float> u(-mag, mag);
    std::vector<float> x(20 * 9);
    for (auto& v : x) v = u(rng);
    Tape<float> t;
    auto y = softmax_rows(t.constant({20, 9}, x));
    for (std::size_t r = 0; r < 20; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) s += y.value()[r * 9 + j];
      EXPECT_NEAR(s, 1.0, 1e-6) << "magnitude " << mag << " row " << r;
    }
  }
}

TEST(Tensor, ReduceMeanOfIdenticalRows) {
  Tape<double> t;
  auto y = reduce(t.constant({3, 2}, {4, -1, 4, -1, 4, -1}), 0, Reduce::kMean);
  EXPECT_EQ(y.shape(), (Shape{2}));
  EXPECT_EQ(values(y), (std::vector<double>{4, -1}));
}

TEST(Tensor, ReduceSumOfOnes) {
  Tape<double> t;
  EXPECT_EQ(reduce(t.constant({7}, std::vector<double>(7, 1.0)), 0, Reduce::kSum).item(), 7.0);
}

TEST(Tensor, ReduceMeanGradientIsUniform) {
  Tape<double> t;
  auto x = t.leaf({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  t.backward(sum_all(reduce(x, 1, Reduce::kMean)));
  for (double g : t.grad(x)) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Tensor, GatherIdentityAndReorder) {
  Tape<double> t;
  auto x = t.constant({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<std::size_t> ident = {0, 1, 2}, re = {2, 0};
  EXPECT_EQ(values(gather_rows(x, std::span<const std::size_t>(ident))), values(x));
  EXPECT_EQ(values(gather_rows(x, std::span<const std::size_t>(re))), (std::vector<double>{20, 21, 0, 1}));
}

TEST(Tensor, GatherOutOfRangeNamesIndex) {
  Tape<double> t;
  auto x = t.constant({3, 2}, std::vector<double>(6));
  const std::vector<std::size_t> bad = {0, 5};
  try {
    gather_rows(x, std::span<const std::size_t>(bad));
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find("index 5"), std::string::npos) << e.what();
  }
}

TEST(Tensor, BackwardSumGivesOnes) {
  Tape<double> t;
  auto w = t.leaf({2, 3}, {0.5, -1, 2, 3, 0, 7});
  t.backward(sum_all(w));
  for (double g : t.grad(w)) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, BackwardHalfSquaredNormGivesW) {
  Tape<double> t;
  std::vector<double> wv = {0.5, -1, 2, 3, 0, 7};
  auto w = t.leaf({6}, wv);
  t.backward(scale(sum_all(mul(w, w)), 0.5));
  EXPECT_EQ(t.grad(w), wv);
}

TEST(Tensor, BackwardRejectsNonScalarLoss) {
  Tape<double> t;
  auto w = t.leaf({2}, {1, 2});
  EXPECT_THROW(t.backward(w), ContractError);
}

TEST(Tensor, BackwardIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> u(-1, 1);
    std::vector<float> a(6 * 8), b(8 * 5);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    Tape<float> t;
    auto x = t.leaf({6, 8}, a);
    auto w = t.leaf({8, 5}, b);
    auto y = softmax_rows(gelu(matmul(x, w)));
    t.backward(sum_all(mul(y, y)));
    auto g = t.grad(x);
    auto gw = t.grad(w);
    g.insert(g.end(), gw.begin(), gw.end());
    return g;
  };
  const auto first = run();
  for (int i = 0; i < 3; ++i) EXPECT_EQ(run(), first);
}

TEST(Tensor, ConstantsGetNoGradient) {
  Tape<double> t;
  auto c = t.constant({2}, {1, 2});
  auto w = t.leaf({2}, {3, 4});
  t.backward(sum_all(mul(c, w)));
  EXPECT_EQ(t.grad(c), (std::vector<double>{0, 0}));
  EXPECT_EQ(t.grad(w), (std::vector<double>{1, 2}));
}

TEST(Tensor, LeafShapeMismatch) {
  Tape<double> t;
  EXPECT_THROW(t.leaf({2, 2}, {1, 2, 3}), ShapeError);
}
