#pragma once

// Shared ViT encoder: patch projection, learnable 1D positional embeddings,
// optional [CLS], pre-LN blocks and a final LayerNorm.

#include <span>
#include <vector>

#include "mimco/config.hpp"
#include "mimco/image.hpp"
#include "mimco/layers.hpp"
#include "mimco/params.hpp"

namespace mimco {

// Encoder outputs for a batch, rows ordered image by image. With [CLS] the
// first row of each image's block is the [CLS] output.
template <class T>
struct Encoded {
  Var<T> tokens;  // [batch·seq × d]
  std::size_t batch = 0;
  std::size_t seq = 0;
  bool has_cls = false;

  std::size_t patch_tokens() const { return has_cls ? seq - 1 : seq; }
};

// Encoder input: patch pixels mapped from [0, 1] to [−1, 1].
template <class T>
std::vector<T> model_input(const Image& img, std::size_t patch) {
  auto p = patchify<T>(img, patch);
  for (auto& v : p) v = T(2) * v - T(1);
  return p;
}

// Stacks model_input() of every image: [batch·N × p²C].
template <class T>
std::vector<T> patchify_batch(std::span<const Image> images, std::size_t patch) {
  std::vector<T> out;
  for (const auto& img : images) {
    auto p = model_input<T>(img, patch);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline void check_visible(std::span<const std::vector<std::size_t>> visible, std::size_t batch, std::size_t n) {
  if (visible.size() != batch)
    throw ContractError(detail::concat("encode: ", visible.size(), " visible lists for batch ", batch));
  for (const auto& v : visible) {
    if (v.size() != visible[0].size()) throw ContractError("encode: visible lists differ in length");
    if (v.empty()) throw ContractError("encode: no visible positions");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] >= n) throw IndexError(detail::concat("encode: visible index ", v[i], " >= sequence length ", n));
      if (i > 0 && v[i] <= v[i - 1]) throw ContractError("encode: visible indices must be sorted and unique");
    }
  }
}

// `patches` is [batch·N × p²C]. `visible` selects, per image, the positions
// fed to the encoder (all when empty). Each token receives the positional
// embedding of its original grid position.
template <class T>
Encoded<T> encode_batch(Binder<T>& bind, const EncoderParams<T>& params, const EncoderConfig& cfg,
                        const Var<T>& patches, std::size_t batch,
                        std::span<const std::vector<std::size_t>> visible = {}, const DropoutCtx& drop = {}) {
  const std::size_t n = cfg.seq_len();
  if (patches.rank() != 2 || patches.dim(0) != batch * n || patches.dim(1) != cfg.patch_dim())
    throw ShapeError(detail::concat("encode: patches ", to_string(patches.shape()), " do not fit batch ", batch,
                                    " of ", n, " patches of dim ", cfg.patch_dim()));
  const bool subset = !visible.empty();
  if (subset) check_visible(visible, batch, n);
  const std::size_t k = subset ? visible[0].size() : n;

  std::vector<std::size_t> rows, pos;
  rows.reserve(batch * k);
  pos.reserve(batch * k);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = subset ? visible[b][i] : i;
      rows.push_back(b * n + j);
      pos.push_back(j);
    }

  auto x = subset ? gather_rows(patches, std::span<const std::size_t>(rows)) : patches;
  x = linear(bind, params.patch, x);
  auto pos_table = bind(params.pos_embed);
  x = add(x, gather_rows(pos_table, std::span<const std::size_t>(pos)));

  std::size_t seq = k;
  const bool has_cls = params.cls.has_value();
  if (has_cls) {
    const std::size_t cls_pos[] = {n};
    auto cls_row = add(bind(*params.cls), gather_rows(pos_table, std::span<const std::size_t>(cls_pos)));
    auto all = concat_rows(cls_row, x);
    std::vector<std::size_t> order;
    order.reserve(batch * (k + 1));
    for (std::size_t b = 0; b < batch; ++b) {
      order.push_back(0);
      for (std::size_t i = 0; i < k; ++i) order.push_back(1 + b * k + i);
    }
    x = gather_rows(all, std::span<const std::size_t>(order));
    seq = k + 1;
  }
  x = drop.apply(x);

  for (const auto& block : params.blocks)
    x = transformer_block(bind, block, x, batch, seq, cfg.heads, cfg.ln_eps, drop);
  x = norm(bind, params.final_ln, x, cfg.ln_eps);
  return Encoded<T>{x, batch, seq, has_cls};
}

// Single image: returns [K × d] (K+1 rows with [CLS] first).
template <class T>
Var<T> encode(Binder<T>& bind, const EncoderParams<T>& params, const EncoderConfig& cfg, const Image& image,
              const std::vector<std::size_t>* visible = nullptr) {
  auto flat = model_input<T>(image, cfg.patch);
  if (image.height != cfg.image_size || image.width != cfg.image_size || image.channels != cfg.channels)
    throw ShapeError(detail::concat("encode: image ", image.height, "x", image.width, "x", image.channels,
                                    " does not match encoder input ", cfg.image_size, "x", cfg.image_size, "x",
                                    cfg.channels));
  auto patches = bind.tape().constant({cfg.seq_len(), cfg.patch_dim()}, std::move(flat), "patches");
  if (visible) return encode_batch(bind, params, cfg, patches, 1, std::span(visible, 1)).tokens;
  return encode_batch(bind, params, cfg, patches, 1).tokens;
}

// Rows of the patch tokens only (drops [CLS]): [batch·K × d].
template <class T>
Var<T> patch_outputs(const Encoded<T>& e) {
  if (!e.has_cls) return e.tokens;
  std::vector<std::size_t> rows;
  rows.reserve(e.batch * (e.seq - 1));
  for (std::size_t b = 0; b < e.batch; ++b)
    for (std::size_t i = 1; i < e.seq; ++i) rows.push_back(b * e.seq + i);
  return gather_rows(e.tokens, std::span<const std::size_t>(rows));
}

// [batch × d] image vectors. GAP averages the patch outputs and excludes
// [CLS]; CLS takes the [CLS] output row.
template <class T>
Var<T> pool(const Encoded<T>& e, Pooling mode) {
  const std::size_t d = e.tokens.dim(1);
  if (mode == Pooling::kCls) {
    if (!e.has_cls) throw ContractError("pool: CLS pooling requested but the sequence has no [CLS] token");
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < e.batch; ++b) rows.push_back(b * e.seq);
    return gather_rows(e.tokens, std::span<const std::size_t>(rows));
  }
  const std::size_t k = e.patch_tokens();
  if (k == 0) throw ContractError("pool: no patch tokens to average");
  return reduce(reshape(patch_outputs(e), {e.batch, k, d}), 1, Reduce::kMean);
}

// Single sequence [K × d] → [d].
template <class T>
Var<T> pool(const Var<T>& encoded, Pooling mode, bool has_cls) {
  if (encoded.rank() != 2 || encoded.dim(0) == 0) throw ShapeError("pool: expected a non-empty [K x d] sequence");
  Encoded<T> e{encoded, 1, encoded.dim(0), has_cls};
  return reshape(pool(e, mode), {encoded.dim(1)});
}

}  // namespace mimco
