#include <gtest/gtest.h>

#include "support/grad_cases.hpp"

using namespace mimco;
using namespace mimco::testing;

class Primitive : public ::testing::TestWithParam<GradCase> {};

TEST_P(Primitive, MatchesCentralDifferences) {
  for (auto seed : kGradSeeds) {
    const auto rep = check_case(GetParam(), seed);
    EXPECT_LT(rep.max_rel, kGradTol) << "seed " << seed << ": " << rep.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Grad, Primitive, ::testing::ValuesIn(primitive_cases()),
                         [](const auto& info) { return info.param.name; });

namespace {

void expect_model_grad(ModelConfig cfg, const ObjectiveOptions& opt, double ratio) {
  for (auto seed : kGradSeeds) {
    const auto rep = check_composite(cfg, opt, ratio, seed);
    EXPECT_LT(rep.max_rel, kGradTol) << "seed " << seed << ": " << rep.worst;
    EXPECT_GT(rep.checked, 0u);
  }
}

}  // namespace

TEST(Grad, CompositeLossLambdaOneRatioPointTwo) {
  ObjectiveOptions opt;
  opt.lambda = 1.0;
  expect_model_grad(toy_config(), opt, 0.2);
}

TEST(Grad, CompositeLossMaskedOnlyMode) {
  ObjectiveOptions opt;
  opt.mim_loss_mode = MimLossMode::kMaskedOnly;
  expect_model_grad(toy_config(), opt, 0.5);
}

TEST(Grad, CompositeLossClsPoolingAndFill) {
  auto cfg = toy_config();
  cfg.classify_pool = Pooling::kCls;
  cfg.mim_fill = Pooling::kCls;
  ObjectiveOptions opt;
  expect_model_grad(cfg, opt, 0.5);
}

TEST(Grad, CompositeLossSharedMask) {
  ObjectiveOptions opt;
  opt.mask_classification = true;
  opt.lambda = 0.5;
  expect_model_grad(toy_config(), opt, 0.5);
}

TEST(Grad, ClassificationOnly) {
  ObjectiveOptions opt;
  opt.lambda = 0.0;
  opt.mim = false;
  expect_model_grad(toy_config(), opt, 0.0);
}
