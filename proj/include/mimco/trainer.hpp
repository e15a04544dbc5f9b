#pragma once

// Co-training loop. Each step runs a clean classification forward and a
// masked token-prediction forward on the same (augmented) images, sums
// L = L_CE + λ·L_MIM, does one backward pass and one AdamW update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimco/data.hpp"
#include "mimco/objective.hpp"
#include "mimco/optim.hpp"
#include "mimco/params.hpp"
#include "mimco/rng.hpp"
#include "mimco/tokenizer.hpp"

namespace mimco {

struct TrainConfig {
  double lambda = 1.0;
  double mask_ratio = 0.2;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t total_steps = 0;  // 0: epochs × steps per epoch
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.96;
  double adam_eps = 1e-8;
  double weight_decay = 0.03;
  std::uint64_t seed = 0;
  bool mim_enabled = true;
  bool mask_classification = false;
  MimLossMode mim_loss_mode = MimLossMode::kAll;
  bool augment = true;
  std::size_t crop_pad = 4;

  void validate() const {
    if (!(lambda >= 0.0)) throw ContractError("train: lambda must be >= 0");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ContractError("train: mask_ratio must be in [0, 1)");
    if (batch_size == 0) throw ContractError("train: batch_size must be >= 1");
    if (!(peak_lr >= 0.0)) throw ContractError("train: peak_lr must be >= 0");
  }

  bool mim_active() const { return mim_enabled && lambda > 0.0; }

  AdamWConfig adamw() const { return {beta1, beta2, adam_eps, weight_decay}; }

  std::uint64_t resolved_total(std::size_t dataset_size) const {
    if (total_steps) return total_steps;
    const std::size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
    return static_cast<std::uint64_t>(per_epoch * epochs);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lambda, mask_ratio, batch_size, epochs, total_steps,
                                                peak_lr, warmup_steps, beta1, beta2, adam_eps, weight_decay, seed,
                                                mim_enabled, mask_classification, mim_loss_mode, augment, crop_pad)

struct TrainState {
  ModelParams<float> params;
  ModelParams<float> m;  // first moments, same layout as params
  ModelParams<float> v;  // second moments
  std::uint64_t step = 0;
  RngStreams rng;
  std::vector<std::size_t> epoch_order;  // data order of the current epoch
};

template <class T>
ModelParams<T> zeros_like(const ModelConfig& cfg) {
  ModelParams<T> z(cfg);
  z.for_each([](Param<T>& p) { std::fill(p.data.begin(), p.data.end(), T(0)); });
  return z;
}

inline TrainState make_train_state(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.rng = RngStreams(seed);
  s.params = make_model<float>(cfg, s.rng[Stream::kInit]);
  s.m = zeros_like<float>(cfg);
  s.v = zeros_like<float>(cfg);
  return s;
}

// Drops optimizer state and gives the model a new classifier for
// `num_classes` labels (fine-tuning on a new label space).
inline void start_finetune(TrainState& s, std::size_t num_classes) {
  reset_classifier(s.params, num_classes, s.rng[Stream::kInit]);
  s.m = zeros_like<float>(s.params.config);
  s.v = zeros_like<float>(s.params.config);
  s.step = 0;
  s.epoch_order.clear();
}

struct LabeledBatch {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  void validate() const {
    if (images.empty()) throw ContractError("batch: empty");
    if (labels.size() != images.size()) throw ShapeError("batch: labels and images differ in count");
    for (auto y : labels)
      if (y >= num_classes) throw IndexError(detail::concat("batch: label ", y, " >= ", num_classes, " classes"));
  }
};

struct StepMetrics {
  std::uint64_t step = 0;
  double loss_ce = 0.0;
  double loss_mim = 0.0;
  double loss = 0.0;
  double lr = 0.0;
  double token_accuracy = 0.0;  // argmax over all positions, masked branch only
};

inline nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step}, {"loss_ce", m.loss_ce}, {"loss_mim", m.loss_mim}, {"loss", m.loss}, {"lr", m.lr}};
}

// Loss values and per-parameter gradients (list() order) of one step.
struct StepGradients {
  StepMetrics metrics;
  std::vector<std::vector<float>> grads;
  bool mim_ran = false;
};

namespace detail {

inline void throw_first_non_finite(const Tape<float>& tape) {
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& n = tape.node(i);
    for (float v : n.value)
      if (!std::isfinite(v))
        throw NonFiniteError(concat("non-finite loss; first non-finite tensor is node ", i, " (", n.op,
                                    n.label.empty() ? "" : " '" + n.label + "'", ", shape ", to_string(n.shape), ")"));
  }
  throw NonFiniteError("non-finite loss");
}

inline double argmax_accuracy(std::span<const float> logits, std::size_t cols, std::span<const std::size_t> targets) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const float* row = logits.data() + r * cols;
    hits += static_cast<std::size_t>(std::max_element(row, row + cols) - row) == targets[r];
  }
  return targets.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(targets.size());
}

}  // namespace detail

// Augments, tokenizes, samples masks, runs the combined forward and the
// backward pass. Advances the augment and mask streams but not the step.
inline StepGradients forward_backward(TrainState& state, const LabeledBatch& batch, const TrainConfig& cfg,
                                      const Codebook* codebook) {
  batch.validate();
  const auto& mcfg = state.params.config;
  const std::size_t b = batch.images.size(), n = mcfg.encoder.seq_len();

  std::vector<Image> images;
  images.reserve(b);
  for (const auto& img : batch.images)
    images.push_back(cfg.augment ? augment_flip_crop(img, cfg.crop_pad, state.rng[Stream::kAugment]) : img);

  ObjectiveOptions opt;
  opt.lambda = cfg.lambda;
  opt.mim = cfg.mim_enabled;
  opt.mask_classification = cfg.mask_classification;
  opt.mim_loss_mode = cfg.mim_loss_mode;
  opt.dropout = DropoutCtx{mcfg.encoder.dropout, &state.rng[Stream::kDropout]};

  // tokens are computed after augmentation
  std::vector<std::size_t> tokens;
  if (opt.mim_active()) {
    if (!codebook) throw ContractError("train_step: masked branch needs a codebook");
    if (codebook->vocab != mcfg.decoder.vocab)
      throw ContractError(detail::concat("train_step: codebook vocabulary ", codebook->vocab, " != decoder vocabulary ",
                                         mcfg.decoder.vocab));
    tokens.reserve(b * n);
    for (const auto& img : images) {
      auto grid = tokenize(img, mcfg.encoder.patch, *codebook);
      tokens.insert(tokens.end(), grid.tokens.begin(), grid.tokens.end());
    }
  }
  std::vector<Mask> masks;
  if (opt.needs_masks())
    for (std::size_t i = 0; i < b; ++i) masks.push_back(sample_mask(n, cfg.mask_ratio, state.rng[Stream::kMask]));

  const auto patches = patchify_batch<float>(images, mcfg.encoder.patch);
  Tape<float> tape;
  Binder<float> bind(tape);
  auto losses = co_training_losses<float>(bind, state.params, patches, b, batch.labels, tokens, masks, opt);
  const float total = losses.total.item();
  if (!std::isfinite(total)) detail::throw_first_non_finite(tape);
  tape.backward(losses.total);

  StepGradients out;
  out.mim_ran = opt.mim_active();
  out.metrics.loss_ce = losses.ce.item();
  out.metrics.loss = total;
  if (out.mim_ran) {
    out.metrics.loss_mim = losses.mim.item();
    out.metrics.token_accuracy = detail::argmax_accuracy(losses.token_logits.value(), mcfg.decoder.vocab, tokens);
  }
  for (const auto* p : state.params.list()) out.grads.push_back(bind.grad(*p));
  return out;
}

// Parameters that were part of this step's graph get an AdamW update; the
// decoder is left untouched whenever the masked branch did not run.
inline void apply_update(TrainState& state, const StepGradients& g, double lr, const AdamWConfig& adam) {
  auto params = state.params.list();
  auto ms = state.m.list();
  auto vs = state.v.list();
  const std::uint64_t t = state.step + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!g.mim_ran && group_of(params[i]->name) == ParamGroup::kDecoder) continue;
    adamw_update(params[i]->data, g.grads[i], ms[i]->data, vs[i]->data, t, lr, adam, decays(params[i]->name));
  }
}

// One optimization step. cfg.total_steps must be set (see resolved_total).
inline StepMetrics train_step(TrainState& state, const LabeledBatch& batch, const TrainConfig& cfg,
                              const Codebook* codebook) {
  cfg.validate();
  const double lr = lr_schedule(state.step, cfg.peak_lr, cfg.warmup_steps, cfg.total_steps);
  auto g = forward_backward(state, batch, cfg, codebook);
  apply_update(state, g, lr, cfg.adamw());
  g.metrics.step = state.step;
  g.metrics.lr = lr;
  ++state.step;
  return g.metrics;
}

inline LabeledBatch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  LabeledBatch batch;
  batch.num_classes = data.num_classes;
  for (auto i : indices) {
    batch.images.push_back(data.images.at(i));
    batch.labels.push_back(data.labels.at(i));
  }
  return batch;
}

// Indices of the batch for the state's current step. A new epoch order is
// drawn from the data-order stream at every epoch boundary and stored in the
// state, so a restored checkpoint continues mid-epoch exactly.
inline std::vector<std::size_t> next_batch_indices(TrainState& state, std::size_t dataset_size,
                                                   std::size_t batch_size) {
  const std::size_t per_epoch = (dataset_size + batch_size - 1) / batch_size;
  const std::size_t within = static_cast<std::size_t>(state.step % per_epoch);
  if (within == 0 || state.epoch_order.size() != dataset_size) {
    state.epoch_order.resize(dataset_size);
    std::iota(state.epoch_order.begin(), state.epoch_order.end(), std::size_t{0});
    auto& engine = state.rng[Stream::kDataOrder];
    for (std::size_t i = dataset_size; i > 1; --i)
      std::swap(state.epoch_order[i - 1], state.epoch_order[std::uniform_int_distribution<std::size_t>(0, i - 1)(engine)]);
  }
  const std::size_t lo = within * batch_size, hi = std::min(dataset_size, lo + batch_size);
  return {state.epoch_order.begin() + static_cast<std::ptrdiff_t>(lo),
          state.epoch_order.begin() + static_cast<std::ptrdiff_t>(hi)};
}

using StepCallback = std::function<void(const StepMetrics&)>;

// Trains until state.step reaches `until` (default: the full schedule).
inline void fit(TrainState& state, const Dataset& data, TrainConfig cfg, const Codebook* codebook,
                const StepCallback& on_step = {}, std::optional<std::uint64_t> until = std::nullopt) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("fit: empty dataset");
  cfg.total_steps = cfg.resolved_total(data.size());
  if (cfg.warmup_steps > cfg.total_steps)
    throw ContractError(detail::concat("fit: warmup ", cfg.warmup_steps, " exceeds total steps ", cfg.total_steps));
  const std::uint64_t stop = std::min(until.value_or(cfg.total_steps), cfg.total_steps);
  while (state.step < stop) {
    const auto idx = next_batch_indices(state, data.size(), cfg.batch_size);
    const auto metrics = train_step(state, make_batch(data, idx), cfg, codebook);
    if (on_step) on_step(metrics);
  }
}

}  // namespace mimco
