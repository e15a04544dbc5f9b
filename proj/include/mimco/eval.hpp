#pragma once

// Top-1 accuracy of the classifier and nearest-neighbour Recall@1 on pooled
// encoder features.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimco/classifier.hpp"
#include "mimco/data.hpp"
#include "mimco/encoder.hpp"
#include "mimco/params.hpp"

namespace mimco {

// Row-major [rows × dim].
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<float> data;
  std::vector<std::size_t> labels;

  std::size_t rows() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

struct Outputs {
  EmbeddingSet features;     // pooled encoder output
  std::vector<float> logits;  // [rows × num_classes]
  std::size_t num_classes = 0;
};

// Inference over a dataset in chunks; no masking, no dropout, no augmentation.
inline Outputs run_model(const ModelParams<float>& params, const Dataset& data, std::size_t chunk = 64) {
  const auto& cfg = params.config;
  Outputs out;
  out.features.dim = cfg.encoder.dim;
  out.num_classes = cfg.num_classes;
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    const std::size_t hi = std::min(data.size(), lo + chunk), b = hi - lo;
    const auto patches =
        patchify_batch<float>(std::span<const Image>(data.images.data() + lo, b), cfg.encoder.patch);
    Tape<float> tape;
    Binder<float> bind(tape, false);
    auto input = tape.constant({b * cfg.encoder.seq_len(), cfg.encoder.patch_dim()}, patches, "patches");
    auto enc = encode_batch(bind, params.encoder, cfg.encoder, input, b);
    auto rep = pool(enc, cfg.classify_pool);
    auto logits = class_logits(bind, params.classifier, rep);
    out.features.data.insert(out.features.data.end(), rep.value().begin(), rep.value().end());
    out.logits.insert(out.logits.end(), logits.value().begin(), logits.value().end());
  }
  out.features.labels = data.labels;
  return out;
}

// Fraction of rows whose highest logit (lowest index on ties) is the label.
inline double accuracy(std::span<const float> logits, std::size_t num_classes, std::span<const std::size_t> labels) {
  if (labels.empty()) throw ContractError("accuracy: no rows");
  if (logits.size() != labels.size() * num_classes)
    throw ShapeError(detail::concat("accuracy: ", logits.size(), " logits for ", labels.size(), " rows of ",
                                    num_classes, " classes"));
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = logits.data() + r * num_classes;
    hits += static_cast<std::size_t>(std::max_element(row, row + num_classes) - row) == labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

enum class Metric { kCosine, kL2 };

namespace detail {

inline std::vector<double> row_norms(const EmbeddingSet& e, const char* which) {
  std::vector<double> out(e.rows());
  for (std::size_t i = 0; i < e.rows(); ++i) {
    double s = 0.0;
    for (float v : e.row(i)) s += static_cast<double>(v) * v;
    if (s == 0.0) throw ContractError(concat("knn: zero-norm ", which, " embedding at row ", i));
    out[i] = std::sqrt(s);
  }
  return out;
}

}  // namespace detail

// For each query, the single nearest index row (highest cosine similarity or
// smallest L2 distance, lowest index on ties) counts as a hit when its label
// matches.
inline double knn_recall_at_1(const EmbeddingSet& queries, const EmbeddingSet& index, Metric metric = Metric::kCosine) {
  if (queries.rows() == 0 || index.rows() == 0) throw ContractError("knn: empty query or index set");
  if (queries.dim != index.dim) throw ShapeError(detail::concat("knn: dims ", queries.dim, " vs ", index.dim));
  std::vector<double> qn, in;
  if (metric == Metric::kCosine) {
    qn = detail::row_norms(queries, "query");
    in = detail::row_norms(index, "index");
  }
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto a = queries.row(q);
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t j = 0; j < index.rows(); ++j) {
      const auto b = index.row(j);
      double s = 0.0;
      if (metric == Metric::kCosine) {
        for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * b[k];
        s /= qn[q] * in[j];
      } else {
        for (std::size_t k = 0; k < a.size(); ++k) {
          const double d = static_cast<double>(a[k]) - b[k];
          s -= d * d;
        }
      }
      if (j == 0 || s > best_score) {
        best = j;
        best_score = s;
      }
    }
    hits += index.labels[best] == queries.labels[q];
  }
  return static_cast<double>(hits) / static_cast<double>(queries.rows());
}

struct EvalReport {
  double accuracy = 0.0;
  double recall_at_1 = 0.0;
  std::size_t n_query = 0;
  std::size_t n_index = 0;
  std::string checkpoint;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, accuracy, recall_at_1, n_query, n_index, checkpoint)

// Accuracy on `query`; Recall@1 of `query` features against `index` features.
inline EvalReport evaluate(const ModelParams<float>& params, const Dataset& query, const Dataset& index,
                           Metric metric = Metric::kCosine) {
  const auto q = run_model(params, query);
  const auto i = run_model(params, index);
  EvalReport r;
  r.accuracy = accuracy(q.logits, q.num_classes, query.labels);
  r.recall_at_1 = knn_recall_at_1(q.features, i.features, metric);
  r.n_query = query.size();
  r.n_index = index.size();
  return r;
}

}  // namespace mimco
