#pragma once

// Experiment grids over the co-training knobs: masking ratio × decoder depth,
// pooling/fill pairs, masked-input classification, MIM per training stage and
// the MIM loss mode.
//
// Every run ("cell") is fully described by a JSON config; its hash is the
// resume key. Finished cells are appended to <out>/cells.jsonl and never run
// again, so sweeps that share cells (e.g. the GAP+GAP pooling row and the
// depth-1 column of the ratio/depth grid) reuse one result. A run whose loss
// turns non-finite becomes a NaN cell and a line in <out>/ablation.log.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimco/checkpoint.hpp"
#include "mimco/data.hpp"
#include "mimco/eval.hpp"
#include "mimco/tokenizer.hpp"
#include "mimco/trainer.hpp"

namespace mimco {

struct TokenizerSpec {
  std::size_t vocab = 32;
  std::size_t iterations = 20;
  std::uint64_t seed = 0;
  std::size_t max_images = 0;  // 0: fit on the whole training split

  bool operator==(const TokenizerSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TokenizerSpec, vocab, iterations, seed, max_images)

// Classifier pooling and decoder fill, written "gap+cls" etc.
struct PoolingPair {
  Pooling classify = Pooling::kGap;
  Pooling fill = Pooling::kGap;

  std::string name() const {
    return std::string(classify == Pooling::kGap ? "gap" : "cls") + "+" + (fill == Pooling::kGap ? "gap" : "cls");
  }

  static PoolingPair parse(const std::string& s) {
    auto one = [&](const std::string& p) {
      if (p == "gap") return Pooling::kGap;
      if (p == "cls") return Pooling::kCls;
      throw ContractError("pooling pair: unknown mode \"" + p + "\" in \"" + s + "\"");
    };
    const auto plus = s.find('+');
    if (plus == std::string::npos) throw ContractError("pooling pair must look like gap+cls, got \"" + s + "\"");
    return {one(s.substr(0, plus)), one(s.substr(plus + 1))};
  }
};

struct StageToggle {
  bool pretrain = false;
  bool finetune = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageToggle, pretrain, finetune)

struct SweepSpec {
  SynthSpec data;
  SynthSpec finetune_data;  // label space for the second stage
  ModelConfig model;
  TrainConfig train;
  TrainConfig finetune_train;
  TokenizerSpec tokenizer;
  std::vector<double> ratios = {0.05, 0.2, 0.5, 0.8};
  std::vector<std::size_t> decoder_depths = {1, 2, 4};
  std::vector<std::string> pooling = {"gap+gap", "cls+cls", "cls+gap", "gap+cls"};
  std::vector<StageToggle> stages = {{false, false}, {false, true}, {true, false}, {true, true}};
  std::vector<MimLossMode> loss_modes = {MimLossMode::kAll, MimLossMode::kMaskedOnly};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string metric = "cosine";
  std::string out = "ablation_out";
  // free-text labels printed at the top of each report, keyed by sweep name
  std::map<std::string, std::vector<std::string>> reference;

  void validate() const {
    if (ratios.empty() || decoder_depths.empty() || pooling.empty() || stages.empty() || loss_modes.empty() ||
        seeds.empty())
      throw ContractError("sweep: every axis needs at least one value");
    for (double r : ratios)
      if (!(r >= 0.0 && r < 1.0)) throw ContractError(detail::concat("sweep: ratio ", r, " outside [0, 1)"));
    for (auto d : decoder_depths)
      if (d == 0) throw ContractError("sweep: decoder depth must be >= 1");
    for (const auto& p : pooling) PoolingPair::parse(p);
    if (metric != "cosine" && metric != "l2") throw ContractError("sweep: metric must be cosine or l2");
    model.validate();
    train.validate();
    finetune_train.validate();
    data.validate();
    finetune_data.validate();
  }

  Metric knn_metric() const { return metric == "l2" ? Metric::kL2 : Metric::kCosine; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepSpec, data, finetune_data, model, train, finetune_train,
                                                tokenizer, ratios, decoder_depths, pooling, stages, loss_modes,
                                                seeds, metric, out, reference)

inline SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing file: " + path);
  try {
    auto spec = nlohmann::json::parse(in).get<SweepSpec>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// cells

struct Stage {
  SynthSpec data;
  TrainConfig train;
};

struct Cell {
  ModelConfig model;
  Stage main;
  std::optional<Stage> pretrain;  // when set, `main` fine-tunes with a fresh head
  TokenizerSpec tokenizer;
  std::string metric = "cosine";

  nlohmann::json config() const {
    nlohmann::json j{{"model", model}, {"data", main.data}, {"train", main.train}, {"tokenizer", tokenizer},
                     {"metric", metric}};
    if (pretrain) j["pretrain"] = {{"data", pretrain->data}, {"train", pretrain->train}};
    return j;
  }

  bool uses_codebook() const { return main.train.mim_active() || (pretrain && pretrain->train.mim_active()); }

  // codebooks are fitted on the first stage's training split
  const SynthSpec& tokenizer_data() const { return pretrain ? pretrain->data : main.data; }
};

inline std::string hash_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string cell_key(const Cell& c) { return hash_hex(c.config().dump()); }

struct CellResult {
  std::string status = "ok";  // or "diverged"
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double recall_at_1 = std::numeric_limits<double>::quiet_NaN();
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t steps = 0;
  double seconds = 0.0;
  std::string message;

  bool ok() const { return status == "ok"; }
};

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline double number_or_nan(const nlohmann::json& j) {
  return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const CellResult& r) {
  j = {{"status", r.status},
       {"accuracy", detail::number_or_null(r.accuracy)},
       {"recall_at_1", detail::number_or_null(r.recall_at_1)},
       {"final_loss", detail::number_or_null(r.final_loss)},
       {"steps", r.steps},
       {"seconds", r.seconds},
       {"message", r.message}};
}

inline void from_json(const nlohmann::json& j, CellResult& r) {
  r.status = j.at("status").get<std::string>();
  r.accuracy = detail::number_or_nan(j.at("accuracy"));
  r.recall_at_1 = detail::number_or_nan(j.at("recall_at_1"));
  r.final_loss = detail::number_or_nan(j.at("final_loss"));
  r.steps = j.at("steps").get<std::uint64_t>();
  r.seconds = j.value("seconds", 0.0);
  r.message = j.value("message", std::string());
}

// Runs cells, caching datasets and codebooks in memory and results on disk.
class Runner {
 public:
  explicit Runner(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    std::ifstream in(dir_ / "cells.jsonl", std::ios::binary);
    std::string line;
    bool torn = false;
    while (std::getline(in, line)) {
      torn = in.eof();  // last line had no newline
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key") || !j.contains("result")) continue;  // torn last line
      done_[j["key"].get<std::string>()] = j["result"].get<CellResult>();
    }
    if (torn) std::ofstream(dir_ / "cells.jsonl", std::ios::app) << '\n';
  }

  const std::filesystem::path& dir() const { return dir_; }
  std::size_t executed() const { return executed_; }
  std::size_t reused() const { return reused_; }
  bool finished(const Cell& c) const { return done_.contains(cell_key(c)); }

  void log(const std::string& line) {
    std::ofstream out(dir_ / "ablation.log", std::ios::app);
    out << line << '\n';
  }

  CellResult run(const Cell& cell, const std::string& tag = {}) {
    const auto key = cell_key(cell);
    if (auto it = done_.find(key); it != done_.end()) {
      ++reused_;
      return it->second;
    }
    auto result = execute(cell);
    ++executed_;
    done_[key] = result;
    {
      std::ofstream out(dir_ / "cells.jsonl", std::ios::app);
      out << nlohmann::json{{"key", key}, {"config", cell.config()}, {"result", result}}.dump() << '\n';
    }
    std::ostringstream msg;
    msg << tag << " " << key << " " << result.status << " acc=" << result.accuracy << " r@1=" << result.recall_at_1
        << " steps=" << result.steps << " " << std::fixed << std::setprecision(1) << result.seconds << "s";
    if (!result.ok()) msg << " : " << result.message;
    log(msg.str());
    return result;
  }

  // Same as run() but never consults or updates the cache.
  CellResult execute(const Cell& cell) {
    const auto t0 = std::chrono::steady_clock::now();
    CellResult r;
    const Codebook* cb = cell.uses_codebook() ? &codebook(cell.tokenizer_data(), cell.tokenizer, cell.model.encoder.patch) : nullptr;
    const auto& main = data(cell.main.data);
    ModelConfig mcfg = cell.model;
    try {
      TrainState state;
      if (cell.pretrain) {
        const auto& pre = data(cell.pretrain->data);
        mcfg.num_classes = pre.train.num_classes;
        state = pretrained(mcfg, *cell.pretrain, cb);
        start_finetune(state, main.train.num_classes);
      } else {
        mcfg.num_classes = main.train.num_classes;
        state = make_train_state(mcfg, cell.main.train.seed);
      }
      fit(state, main.train, cell.main.train, cb, [&](const StepMetrics& m) { r.final_loss = m.loss; });
      r.steps = state.step;
      const auto rep = evaluate(state.params, main.val, main.train,
                                cell.metric == "l2" ? Metric::kL2 : Metric::kCosine);
      r.accuracy = rep.accuracy;
      r.recall_at_1 = rep.recall_at_1;
    } catch (const NonFiniteError& e) {
      r = CellResult{};
      r.status = "diverged";
      r.message = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

 private:
  const SynthData& data(const SynthSpec& spec) {
    const auto key = nlohmann::json(spec).dump();
    auto it = data_.find(key);
    if (it == data_.end()) it = data_.emplace(key, generate(spec)).first;
    return it->second;
  }

  const Codebook& codebook(const SynthSpec& spec, const TokenizerSpec& tok, std::size_t patch) {
    const auto key = nlohmann::json{{"data", spec}, {"tokenizer", tok}, {"patch", patch}}.dump();
    auto it = codebooks_.find(key);
    if (it == codebooks_.end()) {
      const auto& imgs = data(spec).train.images;
      const std::size_t n = tok.max_images ? std::min(tok.max_images, imgs.size()) : imgs.size();
      const auto patches = collect_patches(std::span<const Image>(imgs.data(), n), patch);
      it = codebooks_.emplace(key, fit_codebook(patches, patch_dim(patch, spec.channels), tok.vocab, tok.iterations,
                                                tok.seed))
               .first;
    }
    return it->second;
  }

  // First-stage state, stored as a checkpoint so later cells and reruns
  // start from the identical bits.
  TrainState pretrained(const ModelConfig& mcfg, const Stage& stage, const Codebook* cb) {
    const auto key = hash_hex(nlohmann::json{{"model", mcfg}, {"data", stage.data}, {"train", stage.train}}.dump());
    const auto path = (dir_ / "pretrain" / (key + ".mimc")).string();
    if (std::filesystem::exists(path)) return load_checkpoint(path, mcfg);
    auto state = make_train_state(mcfg, stage.train.seed);
    fit(state, data(stage.data).train, stage.train, cb);
    std::filesystem::create_directories(dir_ / "pretrain");
    save_checkpoint(state, path + ".tmp");
    std::filesystem::rename(path + ".tmp", path);
    return state;
  }

  std::filesystem::path dir_;
  std::map<std::string, CellResult> done_;
  std::map<std::string, SynthData> data_;
  std::map<std::string, Codebook> codebooks_;
  std::size_t executed_ = 0, reused_ = 0;
};

// ---------------------------------------------------------------------------
// summaries and files

struct Stats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;  // finite values only
};

// Sample standard deviation; 0 for a single value.
inline Stats summarize(const std::vector<double>& values) {
  Stats s;
  double sum = 0.0;
  for (double v : values)
    if (std::isfinite(v)) {
      sum += v;
      ++s.n;
    }
  if (s.n == 0) return s;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
  s.stddev = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

namespace detail {

inline std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline std::string ratio_label(double r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

}  // namespace detail

// rows × cols of Stats as CSV: first column `row_name`, then
// <col>_mean,<col>_std,<col>_n for each column.
struct Matrix {
  std::string row_name;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<std::vector<double>>> values;  // [row][col] -> per-seed values

  Matrix(std::string rn, std::vector<std::string> r, std::vector<std::string> c)
      : row_name(std::move(rn)), rows(std::move(r)), cols(std::move(c)),
        values(rows.size(), std::vector<std::vector<double>>(cols.size())) {}

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    out << row_name;
    for (const auto& c : cols) out << ',' << c << "_mean," << c << "_std," << c << "_n";
    out << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out << rows[r];
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto s = summarize(values[r][c]);
        out << ',' << detail::num(s.mean) << ',' << detail::num(s.stddev) << ',' << s.n;
      }
      out << '\n';
    }
    if (!out) throw FormatError("cannot write " + path.string());
  }

  std::string markdown(const std::string& title) const {
    std::ostringstream os;
    os << "### " << title << "\n\n| " << row_name;
    for (const auto& c : cols) os << " | " << c;
    os << " |\n|---";
    for (std::size_t c = 0; c < cols.size(); ++c) os << "|---";
    os << "|\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      os << "| " << rows[r];
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto s = summarize(values[r][c]);
        os << " | " << std::fixed << std::setprecision(4) << s.mean << " ± " << s.stddev << " (n=" << s.n << ")";
      }
      os << " |\n";
    }
    return os.str();
  }
};

struct SweepReport {
  std::string name;
  std::vector<std::filesystem::path> files;
  std::size_t cells = 0;
  std::size_t nan_cells = 0;
};

// Long-form per-cell table plus the JSON sidecar and a markdown report.
class SweepWriter {
 public:
  SweepWriter(const SweepSpec& spec, Runner& runner, std::string name, std::vector<std::string> columns)
      : spec_(spec), runner_(runner), name_(std::move(name)), columns_(std::move(columns)) {
    report_.name = name_;
  }

  CellResult run(const Cell& cell, const std::vector<std::string>& labels) {
    auto r = runner_.run(cell, name_);
    rows_.push_back({labels, cell, r});
    ++report_.cells;
    if (!r.ok()) ++report_.nan_cells;
    return r;
  }

  // For cells that are part of the sweep's comparison but not its rows
  // (e.g. the per-seed baseline); recorded in the sidecar only.
  CellResult run_support(const Cell& cell, const std::string& role) {
    auto r = runner_.run(cell, name_ + "/" + role);
    support_.push_back({{role}, cell, r});
    return r;
  }

  void add_matrix(const std::string& file, const std::string& title, const Matrix& m) {
    m.write_csv(runner_.dir() / file);
    report_.files.push_back(runner_.dir() / file);
    markdown_ += m.markdown(title) + "\n";
  }

  // `extra` adds columns computed by the sweep (same order as extra_cols).
  void set_extra(std::vector<std::string> cols) { extra_cols_ = std::move(cols); }
  void set_extra_values(std::vector<std::vector<double>> v) { extra_ = std::move(v); }

  SweepReport finish() {
    const auto cells_path = runner_.dir() / (name_ + "_cells.csv");
    {
      std::ofstream out(cells_path, std::ios::trunc);
      for (const auto& c : columns_) out << c << ',';
      out << "accuracy,recall_at_1";
      for (const auto& c : extra_cols_) out << ',' << c;
      out << ",status,key\n";
      for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto& row = rows_[i];
        for (const auto& l : row.labels) out << l << ',';
        out << detail::num(row.result.accuracy) << ',' << detail::num(row.result.recall_at_1);
        if (i < extra_.size())
          for (double v : extra_[i]) out << ',' << detail::num(v);
        out << ',' << row.result.status << ',' << cell_key(row.cell) << '\n';
      }
    }
    report_.files.push_back(cells_path);

    nlohmann::json side;
    side["sweep"] = name_;
    side["reference_labels"] = reference();
    side["columns"] = columns_;
    auto dump = [](const Row& row) {
      return nlohmann::json{
          {"labels", row.labels}, {"key", cell_key(row.cell)}, {"config", row.cell.config()}, {"result", row.result}};
    };
    side["cells"] = nlohmann::json::array();
    for (const auto& row : rows_) side["cells"].push_back(dump(row));
    side["support_cells"] = nlohmann::json::array();
    for (const auto& row : support_) side["support_cells"].push_back(dump(row));
    const auto side_path = runner_.dir() / (name_ + ".json");
    std::ofstream(side_path, std::ios::trunc) << side.dump(2) << '\n';
    report_.files.push_back(side_path);

    const auto md_path = runner_.dir() / (name_ + ".md");
    std::ofstream md(md_path, std::ios::trunc);
    md << "# " << name_ << "\n\n";
    for (const auto& l : reference()) md << "> reference: " << l << "\n";
    if (!reference().empty()) md << "\n";
    md << "cells: " << report_.cells << ", NaN cells: " << report_.nan_cells << "\n\n" << markdown_;
    report_.files.push_back(md_path);
    return report_;
  }

 private:
  struct Row {
    std::vector<std::string> labels;
    Cell cell;
    CellResult result;
  };

  std::vector<std::string> reference() const {
    auto it = spec_.reference.find(name_);
    return it == spec_.reference.end() ? std::vector<std::string>{} : it->second;
  }

  const SweepSpec& spec_;
  Runner& runner_;
  std::string name_;
  std::vector<std::string> columns_;
  std::vector<Row> rows_, support_;
  std::vector<std::string> extra_cols_;
  std::vector<std::vector<double>> extra_;
  std::string markdown_;
  SweepReport report_;
};

// ---------------------------------------------------------------------------
// cell builders

inline Cell base_cell(const SweepSpec& spec, std::uint64_t seed) {
  Cell c;
  c.model = spec.model;
  c.model.num_classes = spec.data.num_classes;
  c.main = {spec.data, spec.train};
  c.main.train.seed = seed;
  c.tokenizer = spec.tokenizer;
  c.model.decoder.vocab = spec.tokenizer.vocab;
  c.metric = spec.metric;
  return c;
}

inline Cell mim_cell(const SweepSpec& spec, std::uint64_t seed, double ratio) {
  auto c = base_cell(spec, seed);
  c.main.train.mim_enabled = true;
  c.main.train.mask_ratio = ratio;
  return c;
}

// λ=0, MIM off, no masking. Decoder depth does not matter for this run: the
// decoder is initialized last and never trained.
inline Cell baseline_cell(const SweepSpec& spec, std::uint64_t seed) {
  auto c = base_cell(spec, seed);
  c.main.train.mim_enabled = false;
  c.main.train.lambda = 0.0;
  c.main.train.mask_ratio = 0.0;
  c.main.train.mask_classification = false;
  return c;
}

// ---------------------------------------------------------------------------
// sweeps

inline std::vector<std::string> ratio_labels(const SweepSpec& spec) {
  std::vector<std::string> out;
  for (double r : spec.ratios) out.push_back(detail::ratio_label(r));
  return out;
}

// Δ accuracy and Δ Recall@1 against the λ=0 baseline with the same seed;
// rows are ratios, columns decoder depths.
inline SweepReport run_ratio_depth_sweep(const SweepSpec& spec, Runner& runner) {
  std::vector<std::string> depth_cols;
  for (auto d : spec.decoder_depths) depth_cols.push_back("depth" + std::to_string(d));
  Matrix acc("ratio", ratio_labels(spec), depth_cols), knn = acc, raw_acc = acc;
  SweepWriter w(spec, runner, "ratio_depth", {"ratio", "decoder_depth", "seed"});
  w.set_extra({"baseline_accuracy", "baseline_recall_at_1", "delta_accuracy", "delta_recall_at_1"});
  std::vector<std::vector<double>> extra;
  for (auto seed : spec.seeds) {
    const auto base = w.run_support(baseline_cell(spec, seed), "baseline_seed" + std::to_string(seed));
    for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri)
      for (std::size_t di = 0; di < spec.decoder_depths.size(); ++di) {
        auto c = mim_cell(spec, seed, spec.ratios[ri]);
        c.model.decoder.depth = spec.decoder_depths[di];
        const auto r = w.run(c, {detail::ratio_label(spec.ratios[ri]), std::to_string(spec.decoder_depths[di]),
                                 std::to_string(seed)});
        const double da = r.accuracy - base.accuracy, dk = r.recall_at_1 - base.recall_at_1;
        acc.values[ri][di].push_back(da);
        knn.values[ri][di].push_back(dk);
        raw_acc.values[ri][di].push_back(r.accuracy);
        extra.push_back({base.accuracy, base.recall_at_1, da, dk});
      }
  }
  w.set_extra_values(std::move(extra));
  w.add_matrix("ratio_depth_delta_accuracy.csv", "Δ top-1 accuracy vs λ=0 baseline", acc);
  w.add_matrix("ratio_depth_delta_recall.csv", "Δ KNN Recall@1 vs λ=0 baseline", knn);
  w.add_matrix("ratio_depth_accuracy.csv", "top-1 accuracy", raw_acc);
  return w.finish();
}

// Accuracy vs ratio for each classifier-pooling + decoder-fill pair.
inline SweepReport run_pooling_ablation(const SweepSpec& spec, Runner& runner) {
  Matrix acc("ratio", ratio_labels(spec), spec.pooling), knn = acc;
  SweepWriter w(spec, runner, "pooling", {"ratio", "config", "seed"});
  for (auto seed : spec.seeds)
    for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri)
      for (std::size_t pi = 0; pi < spec.pooling.size(); ++pi) {
        const auto pair = PoolingPair::parse(spec.pooling[pi]);
        auto c = mim_cell(spec, seed, spec.ratios[ri]);
        c.model.classify_pool = pair.classify;
        c.model.mim_fill = pair.fill;
        const auto r =
            w.run(c, {detail::ratio_label(spec.ratios[ri]), pair.name(), std::to_string(seed)});
        acc.values[ri][pi].push_back(r.accuracy);
        knn.values[ri][pi].push_back(r.recall_at_1);
      }
  w.add_matrix("pooling_accuracy.csv", "top-1 accuracy", acc);
  w.add_matrix("pooling_recall.csv", "KNN Recall@1", knn);
  return w.finish();
}

// Three series over the ratio axis: classification on the masked forward
// with MIM, the same without MIM, and the unmasked λ=0 baseline (which does
// not depend on the ratio).
inline SweepReport run_masked_classification(const SweepSpec& spec, Runner& runner) {
  const std::vector<std::string> series = {"masked_cls+mim", "masked_cls_only", "baseline"};
  Matrix acc("ratio", ratio_labels(spec), series), knn = acc;
  SweepWriter w(spec, runner, "masked_cls", {"ratio", "series", "seed"});
  for (auto seed : spec.seeds)
    for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri)
      for (std::size_t si = 0; si < series.size(); ++si) {
        Cell c;
        if (si == 2) {
          c = baseline_cell(spec, seed);
        } else {
          c = mim_cell(spec, seed, spec.ratios[ri]);
          c.main.train.mask_classification = true;
          if (si == 1) {
            c.main.train.mim_enabled = false;
            c.main.train.lambda = 0.0;
          }
        }
        const auto r = w.run(c, {detail::ratio_label(spec.ratios[ri]), series[si], std::to_string(seed)});
        acc.values[ri][si].push_back(r.accuracy);
        knn.values[ri][si].push_back(r.recall_at_1);
      }
  w.add_matrix("masked_cls_accuracy.csv", "top-1 accuracy", acc);
  w.add_matrix("masked_cls_recall.csv", "KNN Recall@1", knn);
  return w.finish();
}

// Pretrain on `data`, fine-tune on `finetune_data` with a new head and fresh
// optimizer state; MIM toggled per stage. Rows: MIM in pretraining, columns:
// MIM in fine-tuning. Metrics are on the fine-tuning validation split.
inline SweepReport run_stage_ablation(const SweepSpec& spec, Runner& runner) {
  Matrix acc("pretrain_mim", {"off", "on"}, {"finetune_off", "finetune_on"}), knn = acc;
  SweepWriter w(spec, runner, "stages", {"pretrain_mim", "finetune_mim", "seed"});
  auto stage_train = [&](TrainConfig t, bool mim, std::uint64_t seed) {
    t.seed = seed;
    t.mim_enabled = mim;
    t.lambda = mim ? (t.lambda > 0.0 ? t.lambda : 1.0) : 0.0;
    if (!mim) t.mask_ratio = 0.0;
    t.mask_classification = false;
    return t;
  };
  for (auto seed : spec.seeds)
    for (const auto& st : spec.stages) {
      Cell c = base_cell(spec, seed);
      c.pretrain = Stage{spec.data, stage_train(spec.train, st.pretrain, seed)};
      c.main = Stage{spec.finetune_data, stage_train(spec.finetune_train, st.finetune, seed)};
      const auto r = w.run(c, {st.pretrain ? "on" : "off", st.finetune ? "on" : "off", std::to_string(seed)});
      acc.values[st.pretrain][st.finetune].push_back(r.accuracy);
      knn.values[st.pretrain][st.finetune].push_back(r.recall_at_1);
    }
  w.add_matrix("stages_accuracy.csv", "fine-tuned top-1 accuracy", acc);
  w.add_matrix("stages_recall.csv", "fine-tuned KNN Recall@1", knn);
  return w.finish();
}

// Paired runs per (ratio, seed) that differ only in the MIM loss mode; the
// mask stream is identical in both members of a pair.
inline SweepReport run_loss_mode_ablation(const SweepSpec& spec, Runner& runner) {
  std::vector<std::string> modes;
  for (auto m : spec.loss_modes) modes.push_back(nlohmann::json(m).get<std::string>());
  // fail before any cell runs rather than midway
  const std::size_t n = spec.model.encoder.seq_len();
  for (double r : spec.ratios)
    if (masked_count(n, r) == 0 &&
        std::find(spec.loss_modes.begin(), spec.loss_modes.end(), MimLossMode::kMaskedOnly) != spec.loss_modes.end())
      throw ContractError(detail::concat("loss-mode sweep: ratio ", r, " masks no position of ", n,
                                         ", so masked_only has nothing to average"));
  Matrix acc("ratio", ratio_labels(spec), modes), knn = acc;
  SweepWriter w(spec, runner, "loss_mode", {"ratio", "seed", "mode"});
  for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri)
    for (auto seed : spec.seeds)
      for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        auto c = mim_cell(spec, seed, spec.ratios[ri]);
        c.main.train.mim_loss_mode = spec.loss_modes[mi];
        const auto r = w.run(c, {detail::ratio_label(spec.ratios[ri]), std::to_string(seed), modes[mi]});
        acc.values[ri][mi].push_back(r.accuracy);
        knn.values[ri][mi].push_back(r.recall_at_1);
      }
  w.add_matrix("loss_mode_accuracy.csv", "top-1 accuracy", acc);
  w.add_matrix("loss_mode_recall.csv", "KNN Recall@1", knn);
  return w.finish();
}

inline const std::vector<std::string>& sweep_names() {
  static const std::vector<std::string> names = {"ratio-depth", "pooling", "masked-cls", "stages", "loss-mode"};
  return names;
}

inline SweepReport run_sweep(const std::string& name, const SweepSpec& spec, Runner& runner) {
  if (name == "ratio-depth") return run_ratio_depth_sweep(spec, runner);
  if (name == "pooling") return run_pooling_ablation(spec, runner);
  if (name == "masked-cls") return run_masked_classification(spec, runner);
  if (name == "stages") return run_stage_ablation(spec, runner);
  if (name == "loss-mode") return run_loss_mode_ablation(spec, runner);
  throw ContractError("unknown sweep \"" + name + "\"");
}

}  // namespace mimco
