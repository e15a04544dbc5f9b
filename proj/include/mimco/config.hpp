#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "mimco/errors.hpp"

namespace mimco {

// Where an image-level vector comes from: the mean of the patch outputs
// (GAP, never including [CLS]) or the [CLS] output row.
enum class Pooling { kGap, kCls };

NLOHMANN_JSON_SERIALIZE_ENUM(Pooling, {{Pooling::kGap, "gap"}, {Pooling::kCls, "cls"}})

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  bool cls_token = false;
  double dropout = 0.0;
  double ln_eps = 1e-6;

  std::size_t grid() const { return image_size / patch; }
  std::size_t seq_len() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch * patch * channels; }

  void validate() const {
    if (patch == 0 || image_size == 0 || image_size % patch != 0)
      throw ContractError(detail::concat("encoder: image size ", image_size, " not divisible by patch ", patch));
    if (heads == 0 || dim % heads != 0)
      throw ContractError(detail::concat("encoder: dim ", dim, " not divisible by heads ", heads));
    if (channels == 0 || mlp_ratio == 0) throw ContractError("encoder: channels and mlp_ratio must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ContractError("encoder: dropout must be in [0, 1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, image_size, channels, patch, dim, depth, heads,
                                                mlp_ratio, cls_token, dropout, ln_eps)

// The decoder shares the encoder width and sequence length.
struct DecoderConfig {
  std::size_t depth = 1;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t vocab = 32;

  bool operator==(const DecoderConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecoderConfig, depth, heads, mlp_ratio, vocab)

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t num_classes = 8;
  Pooling classify_pool = Pooling::kGap;  // representation fed to the classifier
  Pooling mim_fill = Pooling::kGap;       // vector placed at masked decoder positions

  bool has_cls() const {
    return encoder.cls_token || classify_pool == Pooling::kCls || mim_fill == Pooling::kCls;
  }

  void validate() const {
    encoder.validate();
    if (decoder.depth == 0) throw ContractError("decoder: depth must be >= 1");
    if (decoder.heads == 0 || encoder.dim % decoder.heads != 0)
      throw ContractError("decoder: dim not divisible by decoder heads");
    if (decoder.vocab == 0) throw ContractError("decoder: vocabulary must be >= 1");
    if (num_classes < 1) throw ContractError("model: num_classes must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, encoder, decoder, num_classes, classify_pool,
                                                mim_fill)

}  // namespace mimco
