// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfdiff/adam.hpp"
#include "cfdiff/camae.hpp"
#include "cfdiff/checkpoint.hpp"
#include "cfdiff/config.hpp"
#include "cfdiff/dataset.hpp"
#include "cfdiff/eval.hpp"
#include "cfdiff/gradcheck.hpp"
#include "cfdiff/graph.hpp"
#include "cfdiff/rng.hpp"
#include "cfdiff/schedule.hpp"

namespace cfdiff::train {

enum class LossWeighting {
  vlb,     // 1 / (2 beta_t) on denoising terms
  simple,  // unweighted
};

LossWeighting parse_loss_weighting(const std::string& name);

/// Weight applied to ||mu_hat - target||^2 at step t. The t = 1
/// reconstruction term always has weight 1.
double term_weight(int t, double beta_t, LossWeighting weighting);

/// One term of the variational bound for a single user.
double vlb_term(int t, std::span<const float> mu_hat, std::span<const float> mu_tilde, std::span<const float> u0,
                double beta_t, LossWeighting weighting);

/// Inputs of one minibatch step, fully materialized so the step is a pure
/// function of (params, batch).
struct Batch {
  std::vector<std::uint32_t> users;
  std::vector<int> timesteps;
  nd::Tensorf u0;      // B x |I|
  nd::Tensorf u_t;     // B x |I|
  nd::Tensorf target;  // posterior mean (t >= 2) or u0 (t = 1)
  std::vector<double> weights;
  std::vector<nd::Tensorf> contexts;
};

/// Draws t ~ U{1..T} and standard Gaussian noise per user from `rng`.
Batch make_batch(const data::InteractionMatrix& matrix, const graph::ContextStore& store,
                 const camae::CamAeConfig& config, std::span<const std::uint32_t> users,
                 const diffusion::NoiseSchedule& schedule, LossWeighting weighting, Rng& rng);

/// Weighted batch loss (mean over users of vlb_term); no parameter update.
template <class T>
double batch_loss(const camae::CamAeParameters<T>& params, const camae::CamAeConfig& config, const Batch& batch);

/// Forward, backward, Adam. Returns the batch loss before the update.
double train_step(camae::CamAeParameters<float>& params, const camae::CamAeConfig& config, const Batch& batch,
                  nd::AdamState<float>& adam);

/// Sum of every term t = 1..T for one user under frozen per-step noise
/// (noise[t-1] has |I| entries).
double full_vlb_loss(const camae::CamAeParameters<double>& params, const camae::CamAeConfig& config,
                     std::span<const float> u0, const graph::HighOrderContext& context,
                     const diffusion::NoiseSchedule& schedule, std::span<const std::vector<float>> noise,
                     LossWeighting weighting);

/// Reverse-mode gradients of the f64 batch loss against central
/// differences, one entry per parameter tensor.
nd::GradCheckReport check_batch_gradients(camae::CamAeParameters<double>& params, const camae::CamAeConfig& config,
                                          const Batch& batch, const nd::GradCheckOptions& opts = {});

/// Random problem sized by config.num_users x config.num_items (edge
/// probability 0.35 plus one guaranteed item per user). The batch holds
/// every user with t ~ U{1..steps}.
struct GradCheckProblem {
  data::InteractionMatrix matrix;
  graph::ContextStore contexts;
  diffusion::NoiseSchedule schedule;
  Batch batch;
};
GradCheckProblem make_gradcheck_problem(const camae::CamAeConfig& config, int steps, std::uint64_t seed);

struct TrainOptions {
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  LossWeighting weighting = LossWeighting::vlb;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  double seconds = 0.0;
  double seconds_per_iter = 0.0;
};

/// Users with at least one train interaction, in index order.
std::vector<std::uint32_t> trainable_users(const data::InteractionMatrix& matrix);

/// One pass over every trainable user in a seeded shuffled order. The
/// order and noise depend only on (seed, epoch).
EpochStats train_epoch(camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                       const data::InteractionMatrix& matrix, const diffusion::NoiseSchedule& schedule,
                       const graph::ContextStore& store, nd::AdamState<float>& adam, const TrainOptions& opts,
                       int epoch);

struct FitResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log;
  int best_epoch = 0;
  double best_ndcg = -1.0;
  int epochs_run = 0;
  bool stopped_early = false;
  std::vector<EpochStats> history;
};

/// Everything a run needs; contexts must be built from `matrix`.
struct FitInputs {
  RunConfig config;
  const data::InteractionMatrix* matrix = nullptr;
  const graph::ContextStore* contexts = nullptr;
  std::filesystem::path out_dir;
  bool resume = false;  // continue from out_dir/last.ckpt when present
  std::function<void(const std::string&)> progress;  // one line per epoch
};

/// Trains with early stopping on validation NDCG@10, keeping the best
/// checkpoint, the last checkpoint (with optimizer state) and a JSON-lines
/// log in out_dir.
FitResult fit(const FitInputs& inputs);

/// Checkpoint for a model: canonical config, dimensions and weights.
ckpt::Checkpoint make_checkpoint(const RunConfig& config, const camae::CamAeConfig& model,
                                 const camae::CamAeParameters<float>& params);

struct LoadedModel {
  RunConfig config;
  camae::CamAeConfig model;
  camae::CamAeParameters<float> params;
  std::uint64_t digest = 0;
};

LoadedModel load_model(const ckpt::Checkpoint& ck);

}  // namespace cfdiff::train
