// mimco command line: data synthesis, tokenizer fitting, training,
// evaluation and ablation sweeps.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mimco/mimco.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mimco::FormatError("missing file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw mimco::FormatError(path + ": " + e.what());
  }
}

// {"model": {...}, "train": {...}}; either part may be omitted.
struct RunConfig {
  mimco::ModelConfig model;
  mimco::TrainConfig train;
};

RunConfig read_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const auto j = read_json(path);
  try {
    if (j.contains("model")) rc.model = j["model"].get<mimco::ModelConfig>();
    if (j.contains("train")) rc.train = j["train"].get<mimco::TrainConfig>();
  } catch (const json::exception& e) {
    throw mimco::FormatError(path + ": " + e.what());
  }
  return rc;
}

void append_summary(const std::string& path, const json& row) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (fresh) out << "run,steps,loss_ce,loss_mim,loss,lr,seconds,checkpoint\n";
  out << row["run"].get<std::string>() << ',' << row["steps"] << ',' << row["loss_ce"] << ',' << row["loss_mim"]
      << ',' << row["loss"] << ',' << row["lr"] << ',' << row["seconds"] << ',' << row["checkpoint"].get<std::string>()
      << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mimco: classification co-trained with masked token prediction"};
  app.require_subcommand(1);

  // data synth
  auto* data_cmd = app.add_subcommand("data", "synthetic datasets");
  data_cmd->require_subcommand(1);
  auto* synth = data_cmd->add_subcommand("synth", "generate train/val splits in the raw format");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "synthesis spec JSON")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  // tokenizer fit
  auto* tok_cmd = app.add_subcommand("tokenizer", "patch tokenizer");
  tok_cmd->require_subcommand(1);
  auto* tok_fit = tok_cmd->add_subcommand("fit", "k-means codebook over training patches");
  std::string tok_input, tok_out, tok_split = "train";
  std::size_t tok_vocab = 32, tok_iters = 20, tok_patch = 8, tok_max = 0;
  std::uint64_t tok_seed = 0;
  tok_fit->add_option("--input", tok_input, "raw dataset directory")->required();
  tok_fit->add_option("--vocab", tok_vocab, "codebook size V")->required();
  tok_fit->add_option("--iters", tok_iters, "Lloyd iterations")->required();
  tok_fit->add_option("--seed", tok_seed, "initialization seed")->required();
  tok_fit->add_option("--out", tok_out, "codebook file")->required();
  tok_fit->add_option("--patch", tok_patch, "patch size")->capture_default_str();
  tok_fit->add_option("--split", tok_split, "split to fit on")->capture_default_str();
  tok_fit->add_option("--max-images", tok_max, "fit on the first N images (0 = all)")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_config, tr_codebook, tr_out, tr_metrics, tr_summary, tr_resume;
  std::optional<std::uint64_t> tr_until;
  train_cmd->add_option("--data", tr_data, "raw dataset directory")->required();
  train_cmd->add_option("--config", tr_config, "run config JSON {model, train}");
  train_cmd->add_option("--codebook", tr_codebook, "codebook file (needed when MIM is active)");
  train_cmd->add_option("--out", tr_out, "checkpoint to write")->required();
  train_cmd->add_option("--metrics", tr_metrics, "per-step JSONL log");
  train_cmd->add_option("--summary", tr_summary, "run summary CSV (appended)");
  train_cmd->add_option("--resume", tr_resume, "checkpoint to continue from");
  train_cmd->add_option("--until", tr_until, "stop after this many total steps");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "accuracy and KNN Recall@1 of a checkpoint");
  std::string ev_ckpt, ev_data, ev_query = "val", ev_index = "train", ev_metric = "cosine";
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev_data, "raw dataset directory")->required();
  eval_cmd->add_option("--query", ev_query, "query split")->capture_default_str();
  eval_cmd->add_option("--index", ev_index, "index split for KNN")->capture_default_str();
  eval_cmd->add_option("--metric", ev_metric, "cosine or l2")
      ->check(CLI::IsMember({"cosine", "l2"}))
      ->capture_default_str();

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation sweep");
  std::string ab_which, ab_spec, ab_out;
  auto names = mimco::sweep_names();
  names.push_back("all");
  ablate_cmd->add_option("sweep", ab_which, "ratio-depth|pooling|masked-cls|stages|loss-mode|all")
      ->required()
      ->check(CLI::IsMember(names));
  ablate_cmd->add_option("--spec", ab_spec, "sweep spec JSON")->required();
  ablate_cmd->add_option("--out", ab_out, "output directory (default: spec.out)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto spec = read_json(synth_spec).get<mimco::SynthSpec>();
      const auto d = mimco::generate(spec);
      mimco::write_raw(d.train, synth_out, "train");
      mimco::write_raw(d.val, synth_out, "val");
      std::cout << json{{"train", d.train.size()}, {"val", d.val.size()}, {"out", synth_out}}.dump() << '\n';
    } else if (tok_fit->parsed()) {
      const auto ds = mimco::load_raw(tok_input, tok_split);
      const std::size_t n = tok_max ? std::min(tok_max, ds.size()) : ds.size();
      if (n == 0) throw mimco::ContractError("tokenizer fit: no images");
      const auto patches = mimco::collect_patches(std::span<const mimco::Image>(ds.images.data(), n), tok_patch);
      std::vector<double> objective;
      const auto cb = mimco::fit_codebook(patches, mimco::patch_dim(tok_patch, ds.images.front().channels),
                                          tok_vocab, tok_iters, tok_seed, &objective);
      mimco::save_codebook(cb, tok_out);
      std::cout << json{{"vocab", cb.vocab}, {"dim", cb.dim}, {"objective", objective.back()}, {"out", tok_out}}.dump()
                << '\n';
    } else if (train_cmd->parsed()) {
      auto rc = read_run_config(tr_config);
      const auto ds = mimco::load_raw(tr_data, "train");
      rc.model.num_classes = ds.num_classes;
      std::optional<mimco::Codebook> cb;
      if (!tr_codebook.empty()) {
        cb = mimco::load_codebook(tr_codebook);
        rc.model.decoder.vocab = cb->vocab;
      }
      auto state = tr_resume.empty() ? mimco::make_train_state(rc.model, rc.train.seed)
                                     : mimco::load_checkpoint(tr_resume, rc.model);
      std::ofstream metrics;
      if (!tr_metrics.empty()) metrics.open(tr_metrics, state.step ? std::ios::app : std::ios::trunc);
      mimco::StepMetrics last;
      const auto t0 = std::chrono::steady_clock::now();
      mimco::fit(state, ds, rc.train, cb ? &*cb : nullptr,
                 [&](const mimco::StepMetrics& m) {
                   last = m;
                   if (metrics.is_open()) metrics << mimco::to_json(m).dump() << '\n';
                 },
                 tr_until);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      mimco::save_checkpoint(state, tr_out);
      json row{{"run", fs::path(tr_out).stem().string()},
               {"steps", state.step},
               {"loss_ce", last.loss_ce},
               {"loss_mim", last.loss_mim},
               {"loss", last.loss},
               {"lr", last.lr},
               {"seconds", secs},
               {"checkpoint", tr_out}};
      if (!tr_summary.empty()) append_summary(tr_summary, row);
      std::cout << row.dump() << '\n';
    } else if (eval_cmd->parsed()) {
      const auto state = mimco::load_checkpoint(ev_ckpt);
      const auto query = mimco::load_raw(ev_data, ev_query);
      const auto index = mimco::load_raw(ev_data, ev_index);
      auto report = mimco::evaluate(state.params, query, index,
                                    ev_metric == "l2" ? mimco::Metric::kL2 : mimco::Metric::kCosine);
      report.checkpoint = ev_ckpt;
      std::cout << json(report).dump() << '\n';
    } else if (ablate_cmd->parsed()) {
      const auto spec = mimco::load_sweep_spec(ab_spec);
      mimco::Runner runner(ab_out.empty() ? spec.out : ab_out);
      std::vector<std::string> todo = ab_which == "all" ? mimco::sweep_names() : std::vector<std::string>{ab_which};
      for (const auto& name : todo) {
        const auto rep = mimco::run_sweep(name, spec, runner);
        json files = json::array();
        for (const auto& f : rep.files) files.push_back(f.string());
        std::cout << json{{"sweep", name}, {"cells", rep.cells}, {"nan_cells", rep.nan_cells}, {"files", files}}.dump()
                  << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
