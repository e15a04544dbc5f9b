#pragma once

#include <span>

#include "mimco/layers.hpp"
#include "mimco/params.hpp"

namespace mimco {

// Affine map from pooled representations [batch × d] to class logits
// [batch × K]. No activation.
template <class T>
Var<T> class_logits(Binder<T>& bind, const Linear<T>& head, const Var<T>& representation) {
  if (representation.rank() == 1) {
    auto r = reshape(representation, {1, representation.dim(0)});
    auto out = linear(bind, head, r);
    return reshape(out, {out.dim(1)});
  }
  return linear(bind, head, representation);
}

// Sigmoid cross-entropy against one-hot labels: summed over classes, mean
// over the batch.
template <class T>
Var<T> sigmoid_ce(const Var<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() == 1) return sigmoid_cross_entropy(reshape(logits, {1, logits.dim(0)}), labels);
  return sigmoid_cross_entropy(logits, labels);
}

}  // namespace mimco
