#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mimco/checkpoint.hpp"
#include "support/scenarios.hpp"
#include "support/toy.hpp"

using namespace mimco;
using namespace mimco::testing;

namespace {

Dataset toy_data(std::size_t n = 24, std::size_t k = 4) {
  SynthSpec s;
  s.n_train = n;
  s.n_val = 4;
  s.num_classes = k;
  s.image_size = 16;
  return generate(s).train;
}

TrainConfig toy_train(std::uint64_t seed = 3) {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = 4;
  c.warmup_steps = 2;
  c.peak_lr = 3e-3;
  c.seed = seed;
  c.mask_ratio = 0.5;
  return c;
}

}  // namespace

TEST(Trainer, LambdaZeroMatchesClassificationOnlyTrainer) {
  const auto o = baseline_equivalence(toy_config(), toy_data(), toy_train());
  EXPECT_TRUE(o.ok) << o.detail;
}

TEST(Trainer, LambdaZeroWithMimEnabledFlagStillBaseline) {
  // λ=0 alone switches the masked branch off, whatever mim_enabled says
  const auto data = toy_data();
  auto cfg = toy_train();
  cfg.lambda = 0.0;
  auto a = make_train_state(toy_config(), 1);
  auto b = make_train_state(toy_config(), 1);
  fit(a, data, cfg, nullptr);
  baseline_fit(b, data, cfg);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
}

TEST(Trainer, EveryParameterGetsGradient) {
  const auto cfg = toy_config();
  const auto data = toy_data();
  const auto cb = fit_on(data, 8, cfg.decoder.vocab);
  auto state = make_train_state(cfg, 5);
  // move away from zero biases so no gradient is structurally zero
  state.params = rough_params(cfg, 5).cast<float>();
  std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5};
  const auto g = forward_backward(state, make_batch(data, idx), toy_train(), &cb);
  ASSERT_TRUE(g.mim_ran);
  const auto names = state.params.list();
  for (std::size_t i = 0; i < names.size(); ++i) {
    double norm = 0;
    for (float v : g.grads[i]) norm += double(v) * v;
    EXPECT_GT(norm, 0.0) << names[i]->name;
  }
}

TEST(Trainer, DecoderFrozenWithoutMim) {
  const auto data = toy_data();
  auto cfg = toy_train();
  cfg.mim_enabled = false;
  auto s = make_train_state(toy_config(), 2);
  const auto before = s.params.decoder.head.weight.data;
  const auto enc_before = s.params.encoder.patch.weight.data;
  fit(s, data, cfg, nullptr);
  EXPECT_EQ(s.params.decoder.head.weight.data, before);
  EXPECT_NE(s.params.encoder.patch.weight.data, enc_before);
  for (float v : s.m.decoder.head.weight.data) EXPECT_EQ(v, 0.0f);
}

// A plain gradient step of size lr lowers the loss by ≈ lr·‖g‖².
TEST(Trainer, SmallStepDescent) {
  const auto cfg = toy_config();
  const auto batch = toy_batch(cfg, 4, 0.5, 9);
  const auto x = patchify_batch<double>(batch.images, 8);
  ObjectiveOptions opt;
  auto params = rough_params(cfg, 9, 0.1);
  auto loss_and_grad = [&](ModelParams<double>& p, std::vector<std::vector<double>>* grads) {
    Tape<double> t;
    Binder<double> b(t);
    auto l = co_training_losses<double>(b, p, x, 4, batch.labels, batch.tokens, batch.masks, opt).total;
    if (grads) {
      t.backward(l);
      for (auto* q : p.list()) grads->push_back(b.grad(*q));
    }
    return l.item();
  };
  std::vector<std::vector<double>> g;
  const double l0 = loss_and_grad(params, &g);
  double g2 = 0;
  for (const auto& v : g)
    for (double e : v) g2 += e * e;
  const double lr = 1e-6;
  auto list = params.list();
  for (std::size_t i = 0; i < list.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) list[i]->data[j] -= lr * g[i][j];
  const double drop = l0 - loss_and_grad(params, nullptr);
  EXPECT_NEAR(drop, lr * g2, 0.1 * lr * g2);
}

TEST(Trainer, SameSeedSameCheckpoint) {
  const auto cfg = toy_config();
  const auto data = toy_data();
  const auto cb = fit_on(data, 8, cfg.decoder.vocab);
  auto a = make_train_state(cfg, 4), b = make_train_state(cfg, 4);
  fit(a, data, toy_train(4), &cb);
  fit(b, data, toy_train(4), &cb);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  auto c = make_train_state(cfg, 5);
  fit(c, data, toy_train(5), &cb);
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(c));
}

TEST(Trainer, NonFiniteLossNamesTensor) {
  const auto cfg = toy_config();
  const auto data = toy_data();
  auto s = make_train_state(cfg, 1);
  s.params.encoder.blocks[1].fc1.weight.data[3] = std::nanf("");
  auto tc = toy_train();
  tc.mim_enabled = false;
  tc.total_steps = 10;
  std::vector<std::size_t> idx = {0, 1};
  try {
    train_step(s, make_batch(data, idx), tc, nullptr);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("node"), std::string::npos) << msg;
    EXPECT_NE(msg.find("encoder.block1.mlp.fc1.weight"), std::string::npos) << msg;
  }
}

TEST(Trainer, CodebookRequirements) {
  const auto cfg = toy_config();
  const auto data = toy_data();
  auto s = make_train_state(cfg, 1);
  auto tc = toy_train();
  tc.total_steps = 10;
  std::vector<std::size_t> idx = {0, 1};
  const auto batch = make_batch(data, idx);
  EXPECT_THROW(train_step(s, batch, tc, nullptr), ContractError);
  const auto wrong = fit_on(data, 8, cfg.decoder.vocab + 1);
  EXPECT_THROW(train_step(s, batch, tc, &wrong), ContractError);
}

TEST(Trainer, EpochOrderIsAPermutation) {
  auto s = make_train_state(toy_config(), 1);
  std::vector<int> seen(20, 0);
  for (int b = 0; b < 3; ++b) {
    for (auto i : next_batch_indices(s, 20, 7)) ++seen[i];
    ++s.step;
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Trainer, MetricsJsonFields) {
  StepMetrics m{7, 1.5, 0.5, 2.0, 1e-4, 0.3};
  const auto j = to_json(m);
  for (const char* k : {"step", "loss_ce", "loss_mim", "loss", "lr"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.size(), 5u);
}

TEST(Trainer, WarmupLongerThanRunRejected) {
  auto s = make_train_state(toy_config(), 1);
  auto tc = toy_train();
  tc.warmup_steps = 1000;
  EXPECT_THROW(fit(s, toy_data(), tc, nullptr), ContractError);
}

TEST(Trainer, ResumeReproducesStraightRun) {
  const auto cfg = toy_config();
  const auto data = toy_data();
  const auto cb = fit_on(data, 8, cfg.decoder.vocab);
  const auto path = (std::filesystem::temp_directory_path() / "mimco_trainer_resume.mimc").string();
  // split mid-epoch (3 batches per epoch)
  const auto o = resume_matches(cfg, data, toy_train(), &cb, 12, 5, path);
  EXPECT_TRUE(o.ok) << o.detail;
  std::filesystem::remove(path);
}
