#pragma once

// Learnable weights of the encoder, decoder and classifier, plus the Binder
// that turns them into tape leaves for one forward/backward pass.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mimco/config.hpp"
#include "mimco/rng.hpp"
#include "mimco/tensor.hpp"

namespace mimco {

template <class T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> data;

  Param() = default;
  Param(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)), data(numel(shape), T(0)) {}
};

enum class ParamGroup { kEncoder, kDecoder, kClassifier };

inline ParamGroup group_of(std::string_view name) {
  if (name.starts_with("decoder.")) return ParamGroup::kDecoder;
  if (name.starts_with("classifier.")) return ParamGroup::kClassifier;
  return ParamGroup::kEncoder;
}

// Decoupled weight decay applies to projection matrices only; biases,
// LayerNorm parameters, positional embeddings and [CLS] are exempt.
inline bool decays(std::string_view name) { return name.ends_with(".weight"); }

template <class T>
struct Linear {
  Param<T> weight;  // in × out
  Param<T> bias;    // out

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".weight", {in, out}), bias(name + ".bias", {out}) {}
};

template <class T>
struct LayerNormParams {
  Param<T> gain;
  Param<T> bias;

  LayerNormParams() = default;
  LayerNormParams(const std::string& name, std::size_t d) : gain(name + ".gain", {d}), bias(name + ".bias", {d}) {
    std::fill(gain.data.begin(), gain.data.end(), T(1));
  }
};

template <class T>
struct BlockParams {
  LayerNormParams<T> ln1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNormParams<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;

  BlockParams() = default;
  BlockParams(const std::string& name, std::size_t d, std::size_t mlp_ratio)
      : ln1(name + ".ln1", d),
        qkv(name + ".attn.qkv", d, 3 * d),
        proj(name + ".attn.proj", d, d),
        ln2(name + ".ln2", d),
        fc1(name + ".mlp.fc1", d, mlp_ratio * d),
        fc2(name + ".mlp.fc2", mlp_ratio * d, d) {}

  template <class F>
  void for_each(F&& f) {
    for (auto* p : {&ln1.gain, &ln1.bias, &qkv.weight, &qkv.bias, &proj.weight, &proj.bias, &ln2.gain, &ln2.bias,
                    &fc1.weight, &fc1.bias, &fc2.weight, &fc2.bias})
      f(*p);
  }
};

template <class T>
struct EncoderParams {
  Linear<T> patch;
  Param<T> pos_embed;  // N × d, plus a trailing row for [CLS]
  std::optional<Param<T>> cls;
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> final_ln;

  EncoderParams() = default;
  EncoderParams(const EncoderConfig& cfg, bool with_cls)
      : patch("encoder.patch", cfg.patch_dim(), cfg.dim),
        pos_embed("encoder.pos_embed", {cfg.seq_len() + (with_cls ? 1 : 0), cfg.dim}),
        final_ln("encoder.final_ln", cfg.dim) {
    if (with_cls) cls.emplace("encoder.cls", Shape{1, cfg.dim});
    for (std::size_t i = 0; i < cfg.depth; ++i)
      blocks.emplace_back("encoder.block" + std::to_string(i), cfg.dim, cfg.mlp_ratio);
  }

  template <class F>
  void for_each(F&& f) {
    f(patch.weight);
    f(patch.bias);
    f(pos_embed);
    if (cls) f(*cls);
    for (auto& b : blocks) b.for_each(f);
    f(final_ln.gain);
    f(final_ln.bias);
  }
};

template <class T>
struct DecoderParams {
  Param<T> pos_embed;  // N × d
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> final_ln;
  Linear<T> head;  // d × V

  DecoderParams() = default;
  DecoderParams(const EncoderConfig& enc, const DecoderConfig& cfg)
      : pos_embed("decoder.pos_embed", {enc.seq_len(), enc.dim}),
        final_ln("decoder.final_ln", enc.dim),
        head("decoder.head", enc.dim, cfg.vocab) {
    for (std::size_t i = 0; i < cfg.depth; ++i)
      blocks.emplace_back("decoder.block" + std::to_string(i), enc.dim, cfg.mlp_ratio);
  }

  template <class F>
  void for_each(F&& f) {
    f(pos_embed);
    for (auto& b : blocks) b.for_each(f);
    f(final_ln.gain);
    f(final_ln.bias);
    f(head.weight);
    f(head.bias);
  }
};

template <class T>
struct ModelParams {
  ModelConfig config;
  EncoderParams<T> encoder;
  Linear<T> classifier;  // d × K
  DecoderParams<T> decoder;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg)
      : config(cfg),
        encoder(cfg.encoder, cfg.has_cls()),
        classifier("classifier", cfg.encoder.dim, cfg.num_classes),
        decoder(cfg.encoder, cfg.decoder) {
    cfg.validate();
  }

  // Fixed visiting order: encoder, classifier, decoder.
  template <class F>
  void for_each(F&& f) {
    encoder.for_each(f);
    f(classifier.weight);
    f(classifier.bias);
    decoder.for_each(f);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](Param<T>& p) { f(static_cast<const Param<T>&>(p)); });
  }

  std::vector<Param<T>*> list() {
    std::vector<Param<T>*> out;
    for_each([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }

  std::vector<const Param<T>*> list() const {
    std::vector<const Param<T>*> out;
    for_each([&](const Param<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const Param<T>& p) { n += p.data.size(); });
    return n;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out(config);
    auto dst = out.list();
    auto src = list();
    for (std::size_t i = 0; i < src.size(); ++i)
      for (std::size_t j = 0; j < src[i]->data.size(); ++j) dst[i]->data[j] = static_cast<U>(src[i]->data[j]);
    return out;
  }
};

// Normal(0, std) truncated to ±2 std by resampling.
template <class T>
void trunc_normal(Param<T>& p, double std, Engine& engine) {
  for (auto& v : p.data) {
    double x;
    do {
      x = std::normal_distribution<double>(0.0, 1.0)(engine);
    } while (std::abs(x) > 2.0);
    v = static_cast<T>(x * std);
  }
}

inline constexpr double kInitStd = 0.02;

// Projection matrices, positional embeddings and [CLS] get truncated normal
// noise; biases stay 0 and LayerNorm gains 1. Encoder draws come first, then
// the classifier, then the decoder, so decoder shape never shifts the
// encoder or classifier initialization.
template <class T>
void init_params(ModelParams<T>& params, Engine& engine) {
  params.for_each([&](Param<T>& p) {
    if (decays(p.name) || p.name.ends_with("pos_embed") || p.name == "encoder.cls") trunc_normal(p, kInitStd, engine);
  });
}

template <class T>
ModelParams<T> make_model(const ModelConfig& cfg, Engine& engine) {
  ModelParams<T> params(cfg);
  init_params(params, engine);
  return params;
}

// Fresh classifier for a new label space.
template <class T>
void reset_classifier(ModelParams<T>& params, std::size_t num_classes, Engine& engine) {
  params.config.num_classes = num_classes;
  params.classifier = Linear<T>("classifier", params.config.encoder.dim, num_classes);
  trunc_normal(params.classifier.weight, kInitStd, engine);
}

// Creates one tape leaf per parameter on first use.
template <class T>
class Binder {
 public:
  // With trainable = false parameters enter as constants and no backward
  // closures are recorded (inference).
  explicit Binder(Tape<T>& tape, bool trainable = true) : tape_(tape), trainable_(trainable) {}

  Var<T> operator()(const Param<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    auto v = trainable_ ? tape_.leaf(p.shape, p.data, p.name) : tape_.constant(p.shape, p.data, p.name);
    bound_.emplace(&p, v);
    return v;
  }

  Tape<T>& tape() { return tape_; }

  bool bound(const Param<T>& p) const { return bound_.contains(&p); }

  // Zeros for parameters that never entered the graph.
  std::vector<T> grad(const Param<T>& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return std::vector<T>(p.data.size(), T(0));
    return tape_.grad(it->second);
  }

 private:
  Tape<T>& tape_;
  bool trainable_;
  std::unordered_map<const Param<T>*, Var<T>> bound_;
};

}  // namespace mimco
