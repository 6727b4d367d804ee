// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cfdiff/binary_io.hpp"
#include "cfdiff/errors.hpp"

namespace cfdiff::train {

using nd::Tensorf;

LossWeighting parse_loss_weighting(const std::string& name) {
  if (name == "vlb") return LossWeighting::vlb;
  if (name == "simple") return LossWeighting::simple;
  throw ContractError("unknown loss weighting '" + name + "'");
}

double term_weight(int t, double beta_t, LossWeighting weighting) {
  if (!(beta_t > 0.0)) throw ContractError("vlb_term: beta_t must be positive");
  if (t < 1) throw ContractError("vlb_term: t must be >= 1");
  if (t == 1 || weighting == LossWeighting::simple) return 1.0;
  return 1.0 / (2.0 * beta_t);
}

double vlb_term(int t, std::span<const float> mu_hat, std::span<const float> mu_tilde, std::span<const float> u0,
                double beta_t, LossWeighting weighting) {
  const double w = term_weight(t, beta_t, weighting);
  const auto target = t == 1 ? u0 : mu_tilde;
  if (mu_hat.size() != target.size()) throw ShapeError("vlb_term: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu_hat.size(); ++i) {
    const double d = static_cast<double>(mu_hat[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return w * s;
}

Batch make_batch(const data::InteractionMatrix& matrix, const graph::ContextStore& store,
                 const camae::CamAeConfig& config, std::span<const std::uint32_t> users,
                 const diffusion::NoiseSchedule& schedule, LossWeighting weighting, Rng& rng) {
  const std::size_t n = matrix.num_items();
  Batch b;
  b.users.assign(users.begin(), users.end());
  b.u0 = Tensorf(users.size(), n);
  b.u_t = Tensorf(users.size(), n);
  b.target = Tensorf(users.size(), n);
  std::vector<float> noise(n);
  for (std::size_t r = 0; r < users.size(); ++r) {
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(schedule.steps())));
    b.timesteps.push_back(t);
    b.weights.push_back(term_weight(t, schedule.beta(t), weighting));
    matrix.dense_row(users[r], data::kTrain, b.u0.row(r));
    rng.fill_gaussian(noise);
    diffusion::diffuse_to(b.u0.row(r), t, schedule, noise, b.u_t.row(r));
    if (t == 1) {
      std::copy(b.u0.row(r).begin(), b.u0.row(r).end(), b.target.row(r).begin());
    } else {
      diffusion::posterior_mean(b.u_t.row(r), b.u0.row(r), t, schedule, b.target.row(r));
    }
  }
  if (config.variant == camae::Variant::full) b.contexts = camae::dense_contexts<float>(store, users);
  return b;
}

namespace {

template <class T>
std::vector<nd::Tensor<T>> cast_all(const std::vector<Tensorf>& in) {
  std::vector<nd::Tensor<T>> out;
  for (const auto& t : in) out.push_back(t.template cast<T>());
  return out;
}

std::string diagnostics(const camae::CamAeParameters<float>& params, const Batch& batch) {
  std::string msg = " [batch of " + std::to_string(batch.users.size()) + " users; t =";
  for (std::size_t i = 0; i < std::min<std::size_t>(batch.timesteps.size(), 16); ++i) {
    msg += " " + std::to_string(batch.timesteps[i]);
  }
  msg += batch.timesteps.size() > 16 ? " ...;" : ";";
  for (std::size_t i = 0; i < params.size(); ++i) {
    double s = 0.0;
    for (float x : params.tensor(i).data()) s += static_cast<double>(x) * x;
    char buf[96];
    std::snprintf(buf, sizeof buf, " |%s|=%.4g", params.name(i).c_str(), std::sqrt(s));
    msg += buf;
  }
  return msg + "]";
}

}  // namespace

template <class T>
double batch_loss(const camae::CamAeParameters<T>& params, const camae::CamAeConfig& config, const Batch& batch) {
  nd::Tape<T> tape;
  const auto u_t = batch.u_t.cast<T>();
  const auto ctx = cast_all<T>(batch.contexts);
  const auto nodes = camae::camae_forward(tape, params, config, u_t, std::span<const nd::Tensor<T>>(ctx), batch.timesteps);
  const auto loss = tape.mse(nodes.mu, tape.constant(batch.target.cast<T>()), batch.weights);
  return static_cast<double>(tape.value(loss)(0, 0));
}

template double batch_loss<float>(const camae::CamAeParameters<float>&, const camae::CamAeConfig&, const Batch&);
template double batch_loss<double>(const camae::CamAeParameters<double>&, const camae::CamAeConfig&, const Batch&);

double train_step(camae::CamAeParameters<float>& params, const camae::CamAeConfig& config, const Batch& batch,
                  nd::AdamState<float>& adam) {
  try {
    nd::Tape<float> tape;
    const auto nodes = camae::camae_forward(tape, params, config, batch.u_t, std::span<const Tensorf>(batch.contexts),
                                            batch.timesteps);
    const auto loss = tape.mse(nodes.mu, tape.constant(batch.target), batch.weights);
    const double value = static_cast<double>(tape.value(loss)(0, 0));
    const auto grads = tape.backward(loss);
    std::vector<const Tensorf*> g;
    for (auto id : nodes.params) g.push_back(&grads.at(id));
    const auto p = params.pointers();
    nd::adam_step<float>(p, g, adam);
    return value;
  } catch (const NumericError& e) {
    throw NumericError(std::string("training step aborted: ") + e.what() + diagnostics(params, batch));
  }
}

double full_vlb_loss(const camae::CamAeParameters<double>& params, const camae::CamAeConfig& config,
                     std::span<const float> u0, const graph::HighOrderContext& context,
                     const diffusion::NoiseSchedule& schedule, std::span<const std::vector<float>> noise,
                     LossWeighting weighting) {
  if (noise.size() != static_cast<std::size_t>(schedule.steps())) {
    throw ShapeError("full_vlb_loss: need one noise vector per step");
  }
  const std::size_t n = u0.size();
  std::vector<float> u_t(n), mu_tilde(n);
  double total = 0.0;
  for (int t = 1; t <= schedule.steps(); ++t) {
    diffusion::diffuse_to(u0, t, schedule, noise[static_cast<std::size_t>(t - 1)], u_t);
    if (t >= 2) diffusion::posterior_mean(u_t, u0, t, schedule, mu_tilde);
    const std::vector<double> in(u_t.begin(), u_t.end());
    const auto mu = camae::camae_forward_single<double>(params, config, in, context, t);
    const std::vector<float> mu_f(mu.begin(), mu.end());
    total += vlb_term(t, mu_f, mu_tilde, u0, schedule.beta(t), weighting);
  }
  return total;
}

nd::GradCheckReport check_batch_gradients(camae::CamAeParameters<double>& params, const camae::CamAeConfig& config,
                                          const Batch& batch, const nd::GradCheckOptions& opts) {
  const auto u_t = batch.u_t.cast<double>();
  const auto target = batch.target.cast<double>();
  const auto ctx = cast_all<double>(batch.contexts);
  auto build = [&](nd::Tape<double>& tape) {
    const auto fwd = camae::camae_forward(tape, params, config, u_t, std::span<const nd::Tensord>(ctx), batch.timesteps);
    return std::make_pair(tape.mse(fwd.mu, tape.constant(target), batch.weights), fwd.params);
  };
  nd::Tape<double> tape;
  const auto [loss, ids] = build(tape);
  const auto grads = tape.backward(loss);
  std::vector<nd::Tensord> analytic;
  for (auto id : ids) analytic.push_back(grads.at(id));
  const std::vector<std::string> names(params.names().begin(), params.names().end());
  return nd::gradient_check(
      [&] {
        nd::Tape<double> t;
        return t.value(build(t).first)(0, 0);
      },
      params.pointers(), analytic, names, opts);
}

GradCheckProblem make_gradcheck_problem(const camae::CamAeConfig& config, int steps, std::uint64_t seed) {
  if (config.num_users == 0 || config.num_items == 0) throw ContractError("gradcheck: empty problem");
  Rng rng(seed);
  std::vector<data::Interaction> recs;
  for (std::uint32_t u = 0; u < config.num_users; ++u) {
    recs.push_back({u, static_cast<std::uint32_t>(u % config.num_items), std::nullopt});
    for (std::uint32_t i = 0; i < config.num_items; ++i) {
      if (rng.uniform01() < 0.35) recs.push_back({u, i, std::nullopt});
    }
  }
  GradCheckProblem p;
  p.matrix = data::all_train(data::make_log(config.num_users, config.num_items, std::move(recs)));
  p.contexts = graph::ContextStore::build(graph::build_bipartite(p.matrix), config.hops);
  p.schedule = diffusion::build_schedule(steps, 1e-4, 0.02);
  std::vector<std::uint32_t> users(config.num_users);
  for (std::uint32_t u = 0; u < users.size(); ++u) users[u] = u;
  p.batch = make_batch(p.matrix, p.contexts, config, users, p.schedule, LossWeighting::vlb, rng);
  return p;
}

std::vector<std::uint32_t> trainable_users(const data::InteractionMatrix& matrix) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t u = 0; u < matrix.num_users(); ++u) {
    if (matrix.row_count(u, data::kTrain) > 0) out.push_back(u);
  }
  return out;
}

EpochStats train_epoch(camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                       const data::InteractionMatrix& matrix, const diffusion::NoiseSchedule& schedule,
                       const graph::ContextStore& store, nd::AdamState<float>& adam, const TrainOptions& opts,
                       int epoch) {
  if (opts.batch_size == 0) throw ContractError("batch size must be positive");
  auto users = trainable_users(matrix);
  if (users.empty()) throw ContractError("train_epoch: no user has train interactions");
  Rng rng(mix_seed(opts.seed, 0x7261696e00000000ull + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span<std::uint32_t>(users));

  EpochStats stats;
  stats.epoch = epoch;
  double loss_sum = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < users.size(); s += opts.batch_size) {
    const auto e = std::min(users.size(), s + opts.batch_size);
    const std::span<const std::uint32_t> ids(users.data() + s, e - s);
    const auto batch = make_batch(matrix, store, config, ids, schedule, opts.weighting, rng);
    const double loss = train_step(params, config, batch, adam);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss" + diagnostics(params, batch));
    loss_sum += loss;
    ++stats.steps;
  }
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.mean_loss = loss_sum / static_cast<double>(stats.steps);
  stats.seconds_per_iter = stats.seconds / static_cast<double>(stats.steps);
  return stats;
}

ckpt::Checkpoint make_checkpoint(const RunConfig& config, const camae::CamAeConfig& model,
                                 const camae::CamAeParameters<float>& params) {
  ckpt::Checkpoint ck;
  ck.config_text = canonical_text(config);
  ck.meta_text = "num-users = " + std::to_string(model.num_users) + "\nnum-items = " +
                 std::to_string(model.num_items) + "\n";
  ckpt::store_params(ck, params);
  return ck;
}

LoadedModel load_model(const ckpt::Checkpoint& ck) {
  LoadedModel m;
  m.config = parse_config(ck.config_text);
  m.digest = io::fnv1a(ck.config_text);
  const auto users = std::stoull(ckpt::meta_value(ck.meta_text, "num-users"));
  const auto items = std::stoull(ckpt::meta_value(ck.meta_text, "num-items"));
  m.model = model_config(m.config, users, items);
  m.params = ckpt::restore_params(ck);
  const auto expected = camae::init_params<float>(m.model, 0);
  if (expected.size() != m.params.size()) throw IoError("checkpoint: parameter set does not match its config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.name(i) != m.params.name(i) || expected.tensor(i).shape() != m.params.tensor(i).shape()) {
      throw IoError("checkpoint: parameter '" + m.params.name(i) + "' does not match its config");
    }
  }
  return m;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

FitResult fit(const FitInputs& in) {
  if (in.matrix == nullptr || in.contexts == nullptr) throw ContractError("fit: matrix and contexts required");
  const auto& cfg = in.config;
  const auto& matrix = *in.matrix;
  const auto& store = *in.contexts;
  if (store.num_users() != matrix.num_users() || store.num_items() != matrix.num_items()) {
    throw ContractError("fit: context cache dimensions differ from the matrix");
  }
  if (store.max_hop() != cfg.hops) {
    throw ContractError("fit: context cache has H=" + std::to_string(store.max_hop()) + " but config has hops=" +
                        std::to_string(cfg.hops));
  }
  const auto model = model_config(cfg, matrix.num_users(), matrix.num_items());
  const auto schedule = make_schedule(cfg);
  const nd::AdamConfig adam_cfg{.lr = cfg.lr};
  TrainOptions opts{cfg.batch_size, cfg.seed, parse_loss_weighting(cfg.loss_weighting)};

  eval::EvalOptions eval_opts;
  eval_opts.ks = parse_ks(cfg.ks);
  if (std::find(eval_opts.ks.begin(), eval_opts.ks.end(), 10) == eval_opts.ks.end()) eval_opts.ks.push_back(10);
  eval_opts.exclude_val = cfg.exclude_val;
  eval_opts.recall = eval::parse_recall_variant(cfg.recall);
  eval_opts.batch = cfg.eval_batch;
  const eval::InferenceOptions infer{cfg.infer_steps, cfg.stochastic, cfg.seed};
  const bool has_val = matrix.count(data::Split::val) > 0;

  std::filesystem::create_directories(in.out_dir);
  FitResult res;
  res.best_checkpoint = in.out_dir / "best.ckpt";
  res.last_checkpoint = in.out_dir / "last.ckpt";
  res.log = in.out_dir / "train.log.jsonl";

  auto params = camae::init_params<float>(model, cfg.seed);
  const auto shapes = params.shapes();
  nd::AdamState<float> adam(adam_cfg, shapes);
  int start_epoch = 0;
  int bad_evals = 0;
  if (in.resume && std::filesystem::exists(res.last_checkpoint)) {
    const auto ck = ckpt::Checkpoint::load(res.last_checkpoint);
    if (ck.config_text != canonical_text(cfg)) throw ContractError("resume: config differs from the checkpoint's");
    params = load_model(ck).params;
    adam = ckpt::restore_adam(ck, params, adam_cfg);
    start_epoch = std::stoi(ckpt::meta_value(ck.meta_text, "epoch"));
    res.best_epoch = std::stoi(ckpt::meta_value(ck.meta_text, "best-epoch"));
    res.best_ndcg = std::stod(ckpt::meta_value(ck.meta_text, "best-ndcg"));
    bad_evals = std::stoi(ckpt::meta_value(ck.meta_text, "bad-evals"));
  }
  io::write_file_atomic(in.out_dir / "config.cfg", canonical_text(cfg));
  std::ofstream log(res.log, in.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + res.log.string());

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto stats = train_epoch(params, model, matrix, schedule, store, adam, opts, epoch);
    res.history.push_back(stats);
    res.epochs_run = epoch;

    nlohmann::ordered_json line;
    line["epoch"] = epoch;
    line["loss"] = stats.mean_loss;
    line["steps"] = stats.steps;
    line["seconds"] = stats.seconds;
    line["seconds_per_iter"] = stats.seconds_per_iter;
    const bool elapsed_out =
        cfg.time_budget > 0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > cfg.time_budget;
    const bool do_eval = epoch % cfg.eval_every == 0 || epoch == cfg.epochs || elapsed_out;
    bool improved = false;
    if (do_eval && has_val) {
      const auto report = eval::evaluate(params, model, matrix, store, schedule, data::Split::val, eval_opts, infer);
      nlohmann::ordered_json val;
      for (std::size_t i = 0; i < report.ks.size(); ++i) {
        val["recall@" + std::to_string(report.ks[i])] = report.recall[i];
        val["ndcg@" + std::to_string(report.ks[i])] = report.ndcg[i];
      }
      line["val"] = val;
      const double ndcg = report.ndcg_at(10);
      if (ndcg > res.best_ndcg) {
        res.best_ndcg = ndcg;
        res.best_epoch = epoch;
        bad_evals = 0;
        improved = true;
      } else {
        ++bad_evals;
      }
    } else if (!has_val) {
      res.best_epoch = epoch;
      improved = true;
    }
    if (improved) make_checkpoint(cfg, model, params).save(res.best_checkpoint);
    line["best_epoch"] = res.best_epoch;
    log << line.dump() << "\n" << std::flush;

    auto last = make_checkpoint(cfg, model, params);
    last.meta_text += "epoch = " + std::to_string(epoch) + "\nbest-epoch = " + std::to_string(res.best_epoch) +
                      "\nbest-ndcg = " + fmt17(res.best_ndcg) + "\nbad-evals = " + std::to_string(bad_evals) + "\n";
    ckpt::store_adam(last, params, adam);
    last.save(res.last_checkpoint);

    if (in.progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d loss %.6g (%.3fs/iter) best ndcg@10 %.5f @ %d", epoch,
                    stats.mean_loss, stats.seconds_per_iter, res.best_ndcg, res.best_epoch);
      in.progress(buf);
    }
    if (do_eval && has_val && bad_evals >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
    if (elapsed_out) {
      res.stopped_early = true;
      break;
    }
  }
  if (!std::filesystem::exists(res.best_checkpoint)) make_checkpoint(cfg, model, params).save(res.best_checkpoint);
  return res;
}

}  // namespace cfdiff::train
