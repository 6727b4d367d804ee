// SPDX-License-Identifier: Apache-2.0
// cfdiff: prepare / train / evaluate / bench-scaling / bench-attn / gradcheck.
//
// Exit codes: 0 success, 1 contract failure, 2 I/O error. Errors go to
// stderr as `cfdiff: error[<kind>]: <message>`.
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cfdiff/bench.hpp"
#include "cfdiff/binary_io.hpp"
#include "cfdiff/camae.hpp"
#include "cfdiff/checkpoint.hpp"
#include "cfdiff/config.hpp"
#include "cfdiff/errors.hpp"
#include "cfdiff/eval.hpp"
#include "cfdiff/pipeline.hpp"
#include "cfdiff/train.hpp"

namespace fs = std::filesystem;
using namespace cfdiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitContract = 1;
constexpr int kExitIo = 2;

fs::path default_cache_dir() {
  const char* env = std::getenv("CFDIFF_CACHE_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("cfdiff-cache");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_output(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, text);
}

/// Every schema key as `--<key>`, plus `--config <file>`. Values are kept as
/// text and applied in schema order after the config file.
class ConfigFlags {
 public:
  void attach(CLI::App* app, const std::vector<std::string>& only = {}) {
    app->add_option("--config", config_path_, "Config file of `key = value` lines");
    for (const auto& key : config_schema()) {
      if (!only.empty() && std::find(only.begin(), only.end(), key.name) == only.end()) continue;
      app->add_option("--" + key.name, values_[key.name], key.help)->group("Config keys");
    }
  }

  RunConfig resolve(RunConfig base = {}) const {
    if (!config_path_.empty()) base = load_config(config_path_, base);
    for (const auto& key : config_schema()) {
      const auto it = values_.find(key.name);
      if (it != values_.end() && given(key.name)) set_config_value(base, key.name, it->second);
    }
    return base;
  }

  bool given(const std::string& key) const {
    const auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
  }

 private:
  std::string config_path_;
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string input;
  std::string out;
  ConfigFlags flags;
};

int run_prepare(const PrepareArgs& a) {
  const auto cfg = a.flags.resolve();
  const fs::path out = a.out.empty() ? default_cache_dir() : fs::path(a.out);
  const auto s = pipeline::prepare(a.input, cfg, out);
  std::printf("prepared %zu users x %zu items, %zu interactions (train %zu / val %zu / test %zu), %zu users excluded\n",
              s.users, s.items, s.interactions, s.train, s.val, s.test, s.excluded_users);
  std::printf("wrote %s\nwrote %s\nwrote %s\n", pipeline::matrix_path(out).c_str(),
              pipeline::contexts_path(out, cfg.hops).c_str(), pipeline::summary_path(out).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out = "run";
  bool resume = false;
  bool quiet = false;
  ConfigFlags flags;
};

int run_train(const TrainArgs& a) {
  const auto cfg = a.flags.resolve();
  const fs::path data_dir = a.data.empty() ? default_cache_dir() : fs::path(a.data);
  const auto prepared = pipeline::load_prepared(data_dir, cfg);
  train::FitInputs in;
  in.config = cfg;
  in.matrix = &prepared.matrix;
  in.contexts = &prepared.contexts;
  in.out_dir = a.out;
  in.resume = a.resume;
  if (!a.quiet) in.progress = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
  const auto res = train::fit(in);

  nlohmann::ordered_json j;
  j["best_checkpoint"] = res.best_checkpoint.string();
  j["last_checkpoint"] = res.last_checkpoint.string();
  j["log"] = res.log.string();
  j["best_epoch"] = res.best_epoch;
  j["best_val_ndcg@10"] = res.best_ndcg;
  j["epochs_run"] = res.epochs_run;
  j["stopped_early"] = res.stopped_early;
  j["config"] = canonical_text(cfg);
  const auto text = j.dump(2) + "\n";
  write_output(fs::path(a.out) / "train-summary.json", text);
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kEvalKeys{"infer-steps", "ks", "exclude-val", "recall", "stochastic", "eval-batch"};

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string ks;
  std::string out;
  bool popularity = false;
  ConfigFlags flags;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto bytes = io::read_file(a.checkpoint);
  const auto model = train::load_model(ckpt::Checkpoint::deserialize(bytes));
  for (const auto& key : config_schema()) {
    if (a.flags.given(key.name) && std::find(kEvalKeys.begin(), kEvalKeys.end(), key.name) == kEvalKeys.end()) {
      throw ContractError("--" + key.name + " is fixed by the checkpoint");
    }
  }
  auto cfg = a.flags.resolve(model.config);
  if (!a.ks.empty()) set_config_value(cfg, "ks", a.ks);

  data::Split split;
  if (a.split == "test") {
    split = data::Split::test;
  } else if (a.split == "val") {
    split = data::Split::val;
  } else {
    throw ContractError("--split must be val or test");
  }

  const fs::path data_dir = a.data.empty() ? default_cache_dir() : fs::path(a.data);
  const auto prepared = pipeline::load_prepared(data_dir, cfg);
  if (prepared.matrix.num_users() != model.model.num_users || prepared.matrix.num_items() != model.model.num_items) {
    throw ContractError("prepared data in " + data_dir.string() + " does not match the checkpoint dimensions");
  }

  eval::EvalOptions opts;
  opts.ks = parse_ks(cfg.ks);
  opts.exclude_val = cfg.exclude_val;
  opts.recall = eval::parse_recall_variant(cfg.recall);
  opts.batch = cfg.eval_batch;
  const eval::InferenceOptions infer{cfg.infer_steps, cfg.stochastic, cfg.seed};
  auto report = eval::evaluate(model.params, model.model, prepared.matrix, prepared.contexts, make_schedule(cfg), split,
                               opts, infer);
  report.checkpoint_digest = hex64(io::fnv1a(bytes));

  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / ("metrics-" + a.split) : fs::path(a.out);
  const auto config_text = canonical_text(cfg);
  write_output(out.string() + ".json", report.to_json(config_text));
  write_output(out.string() + ".txt", "# checkpoint " + report.checkpoint_digest + "\n" + report.to_text());
  std::fputs(report.to_text().c_str(), stdout);

  if (a.popularity) {
    auto pop = eval::evaluate_scorer(eval::popularity_scorer(prepared.matrix), prepared.matrix, split, opts);
    pop.checkpoint_digest = "popularity";
    write_output(out.string() + "-popularity.json", pop.to_json(config_text));
    std::printf("popularity baseline\n%s", pop.to_text().c_str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ScalingArgs {
  std::string dimension = "users";
  std::string sizes = "2000,4000,8000,16000,32000";
  std::size_t fixed = 2000;
  bench::ScalingConfig cfg;
  std::string out;
};

std::string echo(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += "# " + k + " = " + v + "\n";
  return s;
}

int run_bench_scaling(const ScalingArgs& a) {
  bench::Dimension dim;
  if (a.dimension == "users") {
    dim = bench::Dimension::users;
  } else if (a.dimension == "items") {
    dim = bench::Dimension::items;
  } else {
    throw ContractError("--dimension must be users or items");
  }
  const auto sizes = parse_ks(a.sizes);
  const auto run = bench::time_scaling(dim, sizes, a.fixed, a.cfg);
  const auto& c = a.cfg;
  std::string text = echo({{"dimension", a.dimension}, {"sizes", a.sizes}, {"fixed", std::to_string(a.fixed)},
                           {"k", std::to_string(c.k)}, {"d", std::to_string(c.d)}, {"layers", std::to_string(c.layers)},
                           {"hops", std::to_string(c.hops)}, {"batch", std::to_string(c.batch)},
                           {"warmup", std::to_string(c.warmup)}, {"iterations", std::to_string(c.iterations)},
                           {"sparsity", std::to_string(c.sparsity)}, {"seed", std::to_string(c.seed)},
                           {"steps", std::to_string(c.steps)}}) +
                     run.to_csv();
  if (a.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_output(a.out, text);
  }
  std::fprintf(stderr, "linear fit: slope %.6g s/unit, R^2 %.4f; quadratic t %.3f (critical %.3f, %s)%s\n", run.fit.slope,
               run.fit.r2, run.quadratic.t_stat, run.quadratic.t_critical,
               run.quadratic.c2_significant ? "curvature significant" : "no significant curvature",
               run.partial ? ("; partial: " + run.failure).c_str() : "");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AttnArgs {
  std::size_t n = 2048;
  std::size_t d = 16;
  std::string ks;
  int trials = 50;
  std::uint64_t seed = 31;
  std::string out;
};

int run_bench_attn(const AttnArgs& a) {
  std::string ks_text = a.ks;
  if (ks_text.empty()) {
    ks_text = "32,64,128,256";
    const auto bound = bench::theorem_rank_bound(a.n, 0.5);
    if (bound > 256 && bound <= a.n) ks_text += "," + std::to_string(bound);
  }
  const auto ks = parse_ks(ks_text);
  const auto r = bench::attention_approx_probe(a.n, a.d, ks, a.trials, a.seed);
  const auto text = echo({{"n", std::to_string(a.n)}, {"d", std::to_string(a.d)}, {"trials", std::to_string(a.trials)},
                          {"seed", std::to_string(a.seed)},
                          {"rank_bound_eps_0.5", std::to_string(bench::theorem_rank_bound(a.n, 0.5))}}) +
                    r.to_csv();
  if (a.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_output(a.out, text);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::size_t users = 6;
  std::size_t items = 8;
  double eps = 1e-3;
  int stencil = 4;
  double tolerance = 1e-4;
  std::size_t max_entries = 10000;
  std::string json;
  ConfigFlags flags;
};

int run_gradcheck(const GradcheckArgs& a) {
  RunConfig base;
  base.k = 8;
  base.d = 4;
  base.layers = 1;
  base.steps = 10;
  // Finite differences are only meaningful away from ReLU kinks.
  base.activation = "tanh";
  const auto cfg = a.flags.resolve(base);
  const auto model = model_config(cfg, a.users, a.items);
  const auto prob = train::make_gradcheck_problem(model, cfg.steps, cfg.seed);
  auto params = camae::init_params<double>(model, cfg.seed);
  nd::GradCheckOptions opts;
  opts.eps = a.eps;
  opts.stencil = a.stencil;
  opts.max_entries = a.max_entries;
  opts.seed = cfg.seed;
  const auto rep = train::check_batch_gradients(params, model, prob.batch, opts);

  nlohmann::ordered_json j;
  for (const auto& e : rep.per_param) {
    std::printf("%-16s checked %6zu  max rel err %.3e\n", e.name.c_str(), e.checked, e.max_rel_error);
    j["per_param"][e.name] = e.max_rel_error;
  }
  const auto& w = rep.worst();
  const bool ok = rep.max_rel_error <= a.tolerance;
  std::printf("%s: max relative error %.3e at %s[%zu,%zu] (analytic %.9g, numeric %.9g), tolerance %.1e\n",
              ok ? "PASS" : "FAIL", rep.max_rel_error, w.name.c_str(), w.worst_row, w.worst_col, w.analytic, w.numeric,
              a.tolerance);
  if (!a.json.empty()) {
    j["max_rel_error"] = rep.max_rel_error;
    j["worst"] = {{"param", w.name}, {"row", w.worst_row}, {"col", w.worst_col}};
    j["pass"] = ok;
    j["config"] = canonical_text(cfg);
    write_output(a.json, j.dump(2) + "\n");
  }
  return ok ? kExitOk : kExitContract;
}

int report_error(const char* kind, const std::string& what, int code) {
  std::fprintf(stderr, "cfdiff: error[%s]: %s\n", kind, what.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion recommender with multi-hop cross-attention"};
  app.require_subcommand(1);
  app.footer("Environment: CFDIFF_CACHE_DIR sets the default prepared-data directory.");

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Parse a ratings log, split it and precompute hop contexts");
  p->add_option("--input", prep.input, "Ratings file (tsv, csv or MovieLens ::)")->required();
  p->add_option("--out", prep.out, "Output directory (default $CFDIFF_CACHE_DIR or ./cfdiff-cache)");
  prep.flags.attach(p);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train with early stopping on validation NDCG@10");
  t->add_option("--data", tr.data, "Prepared directory (default $CFDIFF_CACHE_DIR or ./cfdiff-cache)");
  t->add_option("--out", tr.out, "Run directory for checkpoints and the log")->capture_default_str();
  t->add_flag("--resume", tr.resume, "Continue from <out>/last.ckpt");
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");
  tr.flags.attach(t);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Full-ranking Recall@K / NDCG@K of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Prepared directory (default $CFDIFF_CACHE_DIR or ./cfdiff-cache)");
  e->add_option("--split", ev.split, "val or test")->capture_default_str();
  e->add_option("--K", ev.ks, "Cutoffs, e.g. 10,20 (same as --ks)");
  e->add_option("--out", ev.out, "Report path prefix; writes <prefix>.json and <prefix>.txt");
  e->add_flag("--popularity", ev.popularity, "Also report the popularity-ranking baseline");
  ev.flags.attach(e, kEvalKeys);

  ScalingArgs sc;
  auto* s = app.add_subcommand("bench-scaling", "Seconds per training iteration across |U| or |I|");
  s->add_option("--dimension", sc.dimension, "users or items")->capture_default_str();
  s->add_option("--sizes", sc.sizes, "Sizes of the varied dimension (>= 4)")->capture_default_str();
  s->add_option("--fixed", sc.fixed, "Size of the other dimension")->capture_default_str();
  s->add_option("--k", sc.cfg.k)->capture_default_str();
  s->add_option("--d", sc.cfg.d)->capture_default_str();
  s->add_option("--layers", sc.cfg.layers)->capture_default_str();
  s->add_option("--hops", sc.cfg.hops)->capture_default_str();
  s->add_option("--batch", sc.cfg.batch)->capture_default_str();
  s->add_option("--warmup", sc.cfg.warmup)->capture_default_str();
  s->add_option("--iterations", sc.cfg.iterations)->capture_default_str();
  s->add_option("--sparsity", sc.cfg.sparsity)->capture_default_str();
  s->add_option("--steps", sc.cfg.steps, "Diffusion steps T")->capture_default_str();
  s->add_option("--seed", sc.cfg.seed)->capture_default_str();
  s->add_option("--out", sc.out, "CSV path (default stdout)");

  AttnArgs at;
  auto* a = app.add_subcommand("bench-attn", "Low-rank attention approximation probe");
  a->add_option("--n", at.n, "Sequence length")->capture_default_str();
  a->add_option("--d", at.d, "Head dimension")->capture_default_str();
  a->add_option("--ks", at.ks, "Projection ranks (default 32,64,128,256 and the eps=0.5 bound)");
  a->add_option("--trials", at.trials)->capture_default_str();
  a->add_option("--seed", at.seed)->capture_default_str();
  a->add_option("--out", at.out, "CSV path (default stdout)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Reverse-mode gradients against finite differences on a micro model");
  g->add_option("--users", gc.users)->capture_default_str();
  g->add_option("--items", gc.items)->capture_default_str();
  g->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  g->add_option("--stencil", gc.stencil, "Central stencil points (2 or 4)")->capture_default_str();
  g->add_option("--tolerance", gc.tolerance)->capture_default_str();
  g->add_option("--max-entries", gc.max_entries, "Per-tensor subsample size")->capture_default_str();
  g->add_option("--json", gc.json, "Also write a JSON report");
  gc.flags.attach(g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return report_error("usage", ex.what(), kExitContract);
  }

  try {
    if (p->parsed()) return run_prepare(prep);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_evaluate(ev);
    if (s->parsed()) return run_bench_scaling(sc);
    if (a->parsed()) return run_bench_attn(at);
    if (g->parsed()) return run_gradcheck(gc);
  } catch (const IoError& ex) {
    return report_error("io", ex.what(), kExitIo);
  } catch (const fs::filesystem_error& ex) {
    return report_error("io", ex.what(), kExitIo);
  } catch (const ParseError& ex) {
    return report_error("parse", ex.what(), kExitContract);
  } catch (const ContractError& ex) {
    return report_error("contract", ex.what(), kExitContract);
  } catch (const std::exception& ex) {
    return report_error("internal", ex.what(), kExitContract);
  }
  return kExitContract;
}
