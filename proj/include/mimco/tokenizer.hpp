#pragma once

// Frozen patch tokenizer: a k-means codebook over raw flattened patches.
// Each image patch maps to the id of its nearest centroid, giving one
// integer target per encoder position.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimco/errors.hpp"
#include "mimco/image.hpp"
#include "mimco/io.hpp"
#include "mimco/rng.hpp"

namespace mimco {

struct Codebook {
  std::size_t vocab = 0;
  std::size_t dim = 0;
  std::vector<float> centroids;  // vocab × dim
  std::uint64_t fit_seed = 0;

  std::span<const float> centroid(std::size_t i) const { return {centroids.data() + i * dim, dim}; }
};

struct TokenGrid {
  std::vector<std::size_t> tokens;
  bool operator==(const TokenGrid&) const = default;
};

namespace detail {

inline double sq_dist(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

// Index of the nearest centroid; ties go to the lowest index.
inline std::size_t nearest(const Codebook& cb, const float* x, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cb.vocab; ++c) {
    const double d = sq_dist(x, cb.centroids.data() + c * cb.dim, cb.dim);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace detail

// Lloyd's k-means over `patches` (count × dim, row-major). Centroids start at
// V distinct patches drawn uniformly with the seed. A centroid left without
// members is moved onto the point farthest from its current centroid. When
// `objective` is given it receives the sum of squared distances after the
// initial assignment and after every iteration; the sequence never increases.
inline Codebook fit_codebook(std::span<const float> patches, std::size_t dim, std::size_t vocab,
                             std::size_t iterations, std::uint64_t seed,
                             std::vector<double>* objective = nullptr) {
  if (dim == 0 || patches.size() % dim != 0)
    throw ShapeError(detail::concat("fit_codebook: ", patches.size(), " values not a multiple of dim ", dim));
  const std::size_t count = patches.size() / dim;
  if (vocab == 0) throw ContractError("fit_codebook: vocabulary size must be >= 1");
  if (count < vocab)
    throw ContractError(detail::concat("fit_codebook: ", count, " patches is fewer than vocabulary size ", vocab));
  if (iterations == 0) throw ContractError("fit_codebook: iterations must be >= 1");

  Codebook cb{vocab, dim, std::vector<float>(vocab * dim), seed};
  {
    Engine engine = make_engine(seed, 0xc0debeefULL);
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < vocab; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, count - 1)(engine);
      std::swap(order[i], order[j]);
      std::copy_n(patches.data() + order[i] * dim, dim, cb.centroids.data() + i * dim);
    }
  }

  std::vector<std::size_t> assign(count);
  std::vector<double> dist(count);
  auto assign_all = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      assign[i] = detail::nearest(cb, patches.data() + i * dim, &dist[i]);
      total += dist[i];
    }
    return total;
  };

  double obj = assign_all();
  if (objective) objective->assign(1, obj);

  std::vector<double> sums(vocab * dim);
  std::vector<std::size_t> members(vocab);
  std::vector<float> candidate(dim);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(members.begin(), members.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      const float* x = patches.data() + i * dim;
      double* s = sums.data() + assign[i] * dim;
      for (std::size_t j = 0; j < dim; ++j) s[j] += x[j];
      ++members[assign[i]];
    }
    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < vocab; ++c) {
      if (members[c] == 0) {
        empty.push_back(c);
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j)
        candidate[j] = static_cast<float>(sums[c * dim + j] / static_cast<double>(members[c]));
      // Rounding the mean to float may lose against the current centroid once
      // converged; keep whichever has the lower in-cluster error.
      double old_sse = 0.0, new_sse = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        if (assign[i] != c) continue;
        old_sse += dist[i];
        new_sse += detail::sq_dist(patches.data() + i * dim, candidate.data(), dim);
      }
      if (new_sse <= old_sse) std::copy(candidate.begin(), candidate.end(), cb.centroids.begin() + c * dim);
    }
    if (!empty.empty()) {
      std::vector<std::size_t> by_dist(count);
      std::iota(by_dist.begin(), by_dist.end(), std::size_t{0});
      std::stable_sort(by_dist.begin(), by_dist.end(),
                       [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
      for (std::size_t k = 0; k < empty.size(); ++k)
        std::copy_n(patches.data() + by_dist[k] * dim, dim, cb.centroids.data() + empty[k] * dim);
    }
    obj = assign_all();
    if (objective) objective->push_back(obj);
  }
  return cb;
}

// All patches of all images, concatenated in image order.
inline std::vector<float> collect_patches(std::span<const Image> images, std::size_t patch) {
  std::vector<float> out;
  for (const auto& img : images) {
    auto p = patchify<float>(img, patch);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// Maps every patch of `img` to its nearest centroid.
inline TokenGrid tokenize(const Image& img, std::size_t patch, const Codebook& cb) {
  check_patch_grid(img, patch);
  const std::size_t pd = patch_dim(patch, img.channels);
  if (pd != cb.dim)
    throw ShapeError(detail::concat("tokenize: patch dimension ", pd, " does not match codebook dimension ",
                                    cb.dim));
  const auto flat = patchify(img, patch);
  TokenGrid grid;
  grid.tokens.resize(flat.size() / pd);
  for (std::size_t i = 0; i < grid.tokens.size(); ++i)
    grid.tokens[i] = detail::nearest(cb, flat.data() + i * pd);
  return grid;
}

// Pastes each token's centroid back at its patch position.
inline Image detokenize(const TokenGrid& grid, const Codebook& cb, std::size_t patch, std::size_t height,
                        std::size_t width, std::size_t channels) {
  Image out(height, width, channels);
  check_patch_grid(out, patch);
  const std::size_t gx = width / patch;
  if (grid.tokens.size() != (height / patch) * gx)
    throw ShapeError(detail::concat("detokenize: ", grid.tokens.size(), " tokens for a ", height, "x", width,
                                    " image"));
  if (patch_dim(patch, channels) != cb.dim) throw ShapeError("detokenize: codebook dimension mismatch");
  for (std::size_t t = 0; t < grid.tokens.size(); ++t) {
    const std::size_t id = grid.tokens[t];
    if (id >= cb.vocab) throw IndexError(detail::concat("detokenize: token ", id, " >= vocabulary ", cb.vocab));
    const float* src = cb.centroids.data() + id * cb.dim;
    const std::size_t by = t / gx, bx = t % gx;
    for (std::size_t py = 0; py < patch; ++py)
      for (std::size_t px = 0; px < patch; ++px)
        for (std::size_t c = 0; c < channels; ++c) out.at(by * patch + py, bx * patch + px, c) = *src++;
  }
  return out;
}

// File layout: "CDBK", version u32, V u32, dim u32, V·dim f32 (little-endian).
inline constexpr std::uint32_t kCodebookVersion = 1;

inline std::string encode_codebook(const Codebook& cb) {
  io::Writer w;
  w.bytes("CDBK");
  w.u32(kCodebookVersion);
  w.u32(static_cast<std::uint32_t>(cb.vocab));
  w.u32(static_cast<std::uint32_t>(cb.dim));
  for (float v : cb.centroids) w.f32(v);
  return w.buffer();
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
  io::Writer w;
  w.bytes(encode_codebook(cb));
  w.save(path);
}

inline Codebook decode_codebook(io::Reader& r) {
  r.expect_magic("CDBK");
  const auto version = r.u32();
  if (version != kCodebookVersion)
    throw FormatError(detail::concat(r.source(), ": unsupported codebook version ", version));
  Codebook cb;
  cb.vocab = r.u32();
  cb.dim = r.u32();
  if (cb.vocab == 0 || cb.dim == 0) throw FormatError(r.source() + ": empty codebook");
  cb.centroids.resize(cb.vocab * cb.dim);
  for (auto& v : cb.centroids) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(r.source() + ": non-finite centroid value");
  }
  if (!r.done()) throw FormatError(r.source() + ": trailing bytes after codebook");
  return cb;
}

inline Codebook load_codebook(const std::string& path) {
  auto r = io::Reader::from_file(path);
  return decode_codebook(r);
}

}  // namespace mimco
