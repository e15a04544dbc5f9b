#pragma once

// Shallow token decoder and the masked-image-modeling loss.

#include <span>
#include <vector>

#include "mimco/config.hpp"
#include "mimco/layers.hpp"
#include "mimco/masking.hpp"
#include "mimco/params.hpp"
#include "mimco/tokenizer.hpp"

namespace mimco {

// [batch·N × d] reassembled sequence → [batch·N × V] token logits.
// Decoder positional embeddings are added first so identical fill vectors
// at different positions decode differently.
template <class T>
Var<T> decode(Binder<T>& bind, const DecoderParams<T>& params, const ModelConfig& cfg, const Var<T>& x,
              std::size_t batch, const DropoutCtx& drop = {}) {
  const std::size_t n = cfg.encoder.seq_len();
  if (x.rank() != 2 || x.dim(0) != batch * n || x.dim(1) != cfg.encoder.dim)
    throw ShapeError(detail::concat("decode: input ", to_string(x.shape()), " does not fit batch ", batch, " x ", n,
                                    " x ", cfg.encoder.dim));
  std::vector<std::size_t> pos(batch * n);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % n;
  auto h = add(x, gather_rows(bind(params.pos_embed), std::span<const std::size_t>(pos)));
  for (const auto& block : params.blocks)
    h = transformer_block(bind, block, h, batch, n, cfg.decoder.heads, cfg.encoder.ln_eps, drop);
  h = norm(bind, params.final_ln, h, cfg.encoder.ln_eps);
  return linear(bind, params.head, h);
}

enum class MimLossMode { kAll, kMaskedOnly };

NLOHMANN_JSON_SERIALIZE_ENUM(MimLossMode, {{MimLossMode::kAll, "all"}, {MimLossMode::kMaskedOnly, "masked_only"}})

// Token cross-entropy averaged over every position (kAll) or over the masked
// positions only (kMaskedOnly). `targets` holds batch·N token ids.
template <class T>
Var<T> mim_loss(const Var<T>& logits, std::span<const std::size_t> targets, std::span<const Mask> masks,
                MimLossMode mode) {
  const std::size_t batch = masks.size();
  if (batch == 0) throw ContractError("mim_loss: empty batch");
  const std::size_t n = masks[0].size();
  if (logits.rank() != 2 || logits.dim(0) != batch * n)
    throw ShapeError(detail::concat("mim_loss: logits ", to_string(logits.shape()), " for ", batch, " masks of ", n));
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch; ++b) {
    if (masks[b].size() != n) throw ShapeError("mim_loss: masks differ in length");
    for (std::size_t j = 0; j < n; ++j)
      if (mode == MimLossMode::kAll || masks[b].masked(j)) rows.push_back(b * n + j);
  }
  if (rows.empty()) throw ContractError("mim_loss: masked_only mode with an empty mask has no positions to average");
  return softmax_cross_entropy(logits, targets, std::span<const std::size_t>(rows));
}

template <class T>
Var<T> mim_loss(const Var<T>& logits, const TokenGrid& targets, const Mask& mask, MimLossMode mode) {
  return mim_loss(logits, std::span<const std::size_t>(targets.tokens), std::span<const Mask>(&mask, 1), mode);
}

}  // namespace mimco
