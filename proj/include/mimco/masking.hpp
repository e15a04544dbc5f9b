#pragma once

// Constant-ratio random masks, visible/masked splits, and reassembly of the
// visible encoder outputs into a full-length decoder input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "mimco/errors.hpp"
#include "mimco/rng.hpp"
#include "mimco/tensor.hpp"

namespace mimco {

struct Mask {
  std::vector<std::uint8_t> bits;  // 1 = masked
  double ratio = 0.0;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  bool masked(std::size_t j) const { return bits[j] != 0; }

  static Mask none(std::size_t n) { return Mask{std::vector<std::uint8_t>(n, 0), 0.0}; }
  static Mask from_positions(std::size_t n, std::span<const std::size_t> positions) {
    Mask m = none(n);
    for (auto p : positions) {
      if (p >= n) throw IndexError(detail::concat("mask position ", p, " >= ", n));
      m.bits[p] = 1;
    }
    m.ratio = static_cast<double>(m.popcount()) / static_cast<double>(n);
    return m;
  }
};

// round(r·N), clamped so at least one position stays visible.
inline std::size_t masked_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ContractError(detail::concat("masking ratio ", ratio, " outside [0, 1)"));
  if (n == 0) throw ContractError("mask over an empty sequence");
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  return std::min(k, n - 1);
}

// Exactly masked_count(n, ratio) positions, uniform without replacement
// (partial Fisher-Yates). No draws are made when the count is zero.
inline Mask sample_mask(std::size_t n, double ratio, Engine& engine) {
  const std::size_t k = masked_count(n, ratio);
  Mask m{std::vector<std::uint8_t>(n, 0), ratio};
  if (k == 0) return m;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(engine);
    std::swap(idx[i], idx[j]);
    m.bits[idx[i]] = 1;
  }
  return m;
}

struct Split {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
};

inline Split split(const Mask& mask) {
  Split s;
  for (std::size_t j = 0; j < mask.size(); ++j) (mask.masked(j) ? s.masked : s.visible).push_back(j);
  return s;
}

// Builds [batch·N × d] decoder input: row (b, j) is image b's encoder output
// for position j when visible, otherwise fill row b. `encoded_visible` is
// [batch·K × d] in sorted visible order, `fill` is [batch × d].
template <class T>
Var<T> reassemble_batch(const Var<T>& encoded_visible, std::span<const Mask> masks, const Var<T>& fill) {
  const std::size_t batch = masks.size();
  if (batch == 0) throw ContractError("reassemble: empty batch");
  const std::size_t n = masks[0].size();
  if (encoded_visible.rank() != 2 || fill.rank() != 2 || fill.dim(0) != batch ||
      fill.dim(1) != encoded_visible.dim(1))
    throw ShapeError("reassemble: fill " + to_string(fill.shape()) + " does not fit encoded " +
                     to_string(encoded_visible.shape()));
  const std::size_t k = n - masks[0].popcount();
  for (const auto& m : masks)
    if (m.size() != n || n - m.popcount() != k)
      throw ShapeError("reassemble: masks disagree in length or visible count");
  if (encoded_visible.dim(0) != batch * k)
    throw ShapeError(detail::concat("reassemble: ", encoded_visible.dim(0), " encoded rows, expected ", batch * k));
  std::vector<std::size_t> index(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j)
      index[b * n + j] = masks[b].masked(j) ? batch * k + b : b * k + rank++;
  }
  return gather_rows(concat_rows(encoded_visible, fill), std::span<const std::size_t>(index));
}

// Single image: encoded_visible [K × d], fill [d] → [N × d].
template <class T>
Var<T> reassemble(const Var<T>& encoded_visible, const Mask& mask, const Var<T>& fill) {
  if (fill.rank() != 1) throw ShapeError("reassemble: fill must be a vector, got " + to_string(fill.shape()));
  const std::size_t expected = mask.size() - mask.popcount();
  if (encoded_visible.rank() != 2 || encoded_visible.dim(0) != expected)
    throw ShapeError(detail::concat("reassemble: expected ", expected, " visible rows, got ",
                                    to_string(encoded_visible.shape())));
  return reassemble_batch(encoded_visible, std::span<const Mask>(&mask, 1), reshape(fill, {1, fill.dim(0)}));
}

}  // namespace mimco
