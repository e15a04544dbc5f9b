#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mimco/masking.hpp"

using namespace mimco;

TEST(Mask, ZeroRatioMasksNothing) {
  Engine e = make_engine(1, 0);
  EXPECT_EQ(sample_mask(16, 0.0, e).popcount(), 0u);
}

TEST(Mask, CountRoundsToNearest) {
  Engine e = make_engine(1, 0);
  EXPECT_EQ(sample_mask(256, 0.2, e).popcount(), 51u);
}

TEST(Mask, CountClampedToKeepOneVisible) {
  EXPECT_EQ(masked_count(4, 0.9), 3u);
  EXPECT_EQ(masked_count(16, 0.95), 15u);
  EXPECT_EQ(masked_count(1, 0.6), 0u);
}

TEST(Mask, RatioOutsideRangeRejected) {
  Engine e = make_engine(1, 0);
  EXPECT_THROW(sample_mask(16, 1.0, e), ContractError);
  EXPECT_THROW(sample_mask(16, -0.1, e), ContractError);
}

TEST(Mask, PopcountExactOnEveryDraw) {
  Engine e = make_engine(5, 0);
  for (double r : {0.05, 0.2, 0.5, 0.95}) {
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(std::llround(r * 16)), 15);
    for (int i = 0; i < 20000; ++i) ASSERT_EQ(sample_mask(16, r, e).popcount(), want) << "r=" << r;
  }
}

TEST(Mask, PositionMarginalsAreUniform) {
  Engine e = make_engine(9, 0);
  constexpr int kDraws = 100000;
  std::vector<int> hits(16, 0);
  for (int i = 0; i < kDraws; ++i) {
    const auto m = sample_mask(16, 0.25, e);
    for (std::size_t j = 0; j < 16; ++j) hits[j] += m.bits[j];
  }
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(hits[j] / double(kDraws), 0.25, 0.01) << "position " << j;
}

TEST(Mask, SameStreamStateSameMask) {
  Engine a = make_engine(3, 2), b = make_engine(3, 2);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_mask(16, 0.5, a).bits, sample_mask(16, 0.5, b).bits);
}

TEST(Split, EmptyMask) {
  const auto s = split(Mask::none(4));
  EXPECT_EQ(s.visible, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(s.masked.empty());
}

TEST(Split, HandExample) {
  const std::vector<std::size_t> pos = {1, 3};
  const auto s = split(Mask::from_positions(4, pos));
  EXPECT_EQ(s.visible, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(s.masked, (std::vector<std::size_t>{1, 3}));
}

TEST(Split, PartitionsTheSequence) {
  Engine e = make_engine(17, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto m = sample_mask(16, 0.05 * (i % 19), e);
    const auto s = split(m);
    std::vector<std::size_t> all = s.visible;
    all.insert(all.end(), s.masked.begin(), s.masked.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> want(16);
    std::iota(want.begin(), want.end(), std::size_t{0});
    ASSERT_EQ(all, want);
    ASSERT_TRUE(std::is_sorted(s.visible.begin(), s.visible.end()));
    ASSERT_TRUE(std::is_sorted(s.masked.begin(), s.masked.end()));
    for (auto j : s.masked) ASSERT_TRUE(m.masked(j));
  }
}

TEST(Reassemble, EmptyMaskIsIdentity) {
  Tape<double> t;
  std::vector<double> enc = {1, 2, 3, 4, 5, 6};
  auto y = reassemble(t.constant({3, 2}, enc), Mask::none(3), t.constant({2}, {9, 9}));
  EXPECT_EQ(std::vector<double>(y.value().begin(), y.value().end()), enc);
}

TEST(Reassemble, AllButOneMasked) {
  Tape<double> t;
  const std::vector<std::size_t> pos = {0, 1, 3};
  auto y = reassemble(t.constant({1, 2}, {5, 6}), Mask::from_positions(4, pos), t.constant({2}, {-1, -2}));
  EXPECT_EQ(std::vector<double>(y.value().begin(), y.value().end()),
            (std::vector<double>{-1, -2, -1, -2, 5, 6, -1, -2}));
}

TEST(Reassemble, FillGradientCountsMaskedPositions) {
  Tape<double> t;
  const std::vector<std::size_t> pos = {1, 2, 4};
  const auto mask = Mask::from_positions(6, pos);
  auto enc = t.leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  auto fill = t.leaf({2}, {0.5, 0.5});
  t.backward(sum_all(reassemble(enc, mask, fill)));
  EXPECT_EQ(t.grad(fill), (std::vector<double>{3, 3}));
  EXPECT_EQ(t.grad(enc), std::vector<double>(6, 1.0));
}

TEST(Reassemble, VisibleCountMismatch) {
  Tape<double> t;
  const std::vector<std::size_t> pos = {1};
  EXPECT_THROW(reassemble(t.constant({4, 2}, std::vector<double>(8)), Mask::from_positions(4, pos),
                          t.constant({2}, {0, 0})),
               ShapeError);
}
