#pragma once

// Combined objective: sigmoid cross-entropy on the classification branch plus
// λ times the token-prediction loss on the masked branch, both on the same
// images and summed before a single backward pass.

#include <optional>
#include <span>
#include <vector>

#include "mimco/classifier.hpp"
#include "mimco/decoder.hpp"
#include "mimco/encoder.hpp"
#include "mimco/masking.hpp"
#include "mimco/params.hpp"

namespace mimco {

struct ObjectiveOptions {
  double lambda = 1.0;
  bool mim = true;                   // run the masked branch (only when lambda > 0)
  bool mask_classification = false;  // classifier reads the masked forward
  MimLossMode mim_loss_mode = MimLossMode::kAll;
  DropoutCtx dropout;

  bool mim_active() const { return mim && lambda > 0.0; }
  bool needs_masks() const { return mim_active() || mask_classification; }
};

template <class T>
struct Losses {
  Var<T> ce;
  Var<T> mim;  // invalid when the masked branch is off
  Var<T> total;
  Var<T> class_logits;
  Var<T> token_logits;  // [batch·N × V] when the masked branch ran
};

// `patches` is [batch·N × p²C] (see patchify_batch). `tokens` (batch·N ids) is
// read only when the masked branch runs; `masks` (one per image) whenever the
// branch runs or mask_classification is set.
//
// When every mask is empty the masked forward is the clean forward, so the
// clean encoder outputs are reused instead of being recomputed.
template <class T>
Losses<T> co_training_losses(Binder<T>& bind, const ModelParams<T>& params, std::span<const T> patches,
                             std::size_t batch, std::span<const std::size_t> labels,
                             std::span<const std::size_t> tokens, std::span<const Mask> masks,
                             const ObjectiveOptions& opt) {
  const auto& cfg = params.config;
  const std::size_t n = cfg.encoder.seq_len();
  auto input = bind.tape().constant({batch * n, cfg.encoder.patch_dim()},
                                    std::vector<T>(patches.begin(), patches.end()), "patches");
  if (opt.needs_masks() && masks.size() != batch)
    throw ContractError(detail::concat("objective: ", masks.size(), " masks for batch ", batch));
  if (opt.mim_active() && tokens.size() != batch * n)
    throw ContractError(detail::concat("objective: ", tokens.size(), " token targets for ", batch * n, " positions"));

  std::optional<Encoded<T>> clean, masked;
  if (!opt.mask_classification)
    clean = encode_batch(bind, params.encoder, cfg.encoder, input, batch, {}, opt.dropout);

  if (opt.needs_masks()) {
    bool any_masked = false;
    for (const auto& m : masks) any_masked = any_masked || m.popcount() > 0;
    if (!any_masked && clean) {
      masked = clean;
    } else {
      std::vector<std::vector<std::size_t>> visible;
      visible.reserve(batch);
      for (const auto& m : masks) visible.push_back(split(m).visible);
      masked = encode_batch(bind, params.encoder, cfg.encoder, input, batch,
                            std::span<const std::vector<std::size_t>>(visible), opt.dropout);
    }
  }

  Losses<T> out;
  const auto& for_class = opt.mask_classification ? *masked : *clean;
  out.class_logits = class_logits(bind, params.classifier, pool(for_class, cfg.classify_pool));
  out.ce = sigmoid_ce(out.class_logits, labels);
  out.total = out.ce;

  if (opt.mim_active()) {
    auto fill = pool(*masked, cfg.mim_fill);
    auto decoder_in = reassemble_batch(patch_outputs(*masked), masks, fill);
    out.token_logits = decode(bind, params.decoder, cfg, decoder_in, batch, opt.dropout);
    out.mim = mim_loss(out.token_logits, tokens, masks, opt.mim_loss_mode);
    out.total = add(out.ce, scale(out.mim, static_cast<T>(opt.lambda)));
  }
  return out;
}

}  // namespace mimco
