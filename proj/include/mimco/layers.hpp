#pragma once

#include "mimco/params.hpp"
#include "mimco/rng.hpp"
#include "mimco/tensor.hpp"

namespace mimco {

// Dropout settings for one forward pass. A null engine disables dropout.
struct DropoutCtx {
  double rate = 0.0;
  Engine* engine = nullptr;

  template <class T>
  Var<T> apply(const Var<T>& x) const {
    if (rate <= 0.0 || engine == nullptr) return x;
    return dropout(x, rate, *engine);
  }
};

template <class T>
Var<T> linear(Binder<T>& bind, const Linear<T>& lin, const Var<T>& x) {
  return add_bias(matmul(x, bind(lin.weight)), bind(lin.bias));
}

template <class T>
Var<T> norm(Binder<T>& bind, const LayerNormParams<T>& ln, const Var<T>& x, double eps) {
  return layer_norm(x, bind(ln.gain), bind(ln.bias), eps);
}

// Pre-LN transformer block over [batch·seq × d]:
//   x + Attn(LN(x)), then x + MLP(LN(x)) with a GELU hidden layer.
template <class T>
Var<T> transformer_block(Binder<T>& bind, const BlockParams<T>& bp, Var<T> x, std::size_t batch, std::size_t seq,
                         std::size_t heads, double eps, const DropoutCtx& drop = {}) {
  auto h = norm(bind, bp.ln1, x, eps);
  h = attention(linear(bind, bp.qkv, h), batch, seq, heads);
  x = add(x, drop.apply(linear(bind, bp.proj, h)));
  h = norm(bind, bp.ln2, x, eps);
  h = gelu(linear(bind, bp.fc1, h));
  return add(x, drop.apply(linear(bind, bp.fc2, h)));
}

}  // namespace mimco
