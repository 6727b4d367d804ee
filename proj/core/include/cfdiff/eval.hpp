// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfdiff/camae.hpp"
#include "cfdiff/dataset.hpp"
#include "cfdiff/graph.hpp"
#include "cfdiff/schedule.hpp"

namespace cfdiff::eval {

enum class RecallVariant {
  truncated,  // hits / min(K, |relevant|)
  full,       // hits / |relevant|
};

RecallVariant parse_recall_variant(const std::string& name);

struct InferenceOptions {
  int infer_steps = 10;     // T'
  bool stochastic = false;  // add sqrt(beta_t) noise on every reverse step but the last
  std::uint64_t seed = 0;   // corruption noise is drawn per user from mix_seed(seed, user)
};

/// Corrupt-then-denoise for a batch. `u_obs` is B x |I|, `contexts` as for
/// camae_forward, `users` identifies the noise stream of each row.
nd::Tensorf denoise_infer_batch(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                                const nd::Tensorf& u_obs, std::span<const nd::Tensorf> contexts,
                                std::span<const std::uint32_t> users, const diffusion::NoiseSchedule& schedule,
                                const InferenceOptions& opts);

/// Single-user convenience wrapper.
std::vector<float> denoise_infer(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                                 std::span<const float> u_obs, const graph::HighOrderContext& context,
                                 std::uint32_t user, const diffusion::NoiseSchedule& schedule,
                                 const InferenceOptions& opts);

/// Top-K item indices by descending score, ties by ascending index.
/// `exclude` must be sorted ascending. Returns the whole pool when K
/// exceeds it.
std::vector<std::uint32_t> rank_topk(std::span<const float> scores, std::span<const std::uint32_t> exclude,
                                     std::size_t k);

struct RankingMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

/// `relevant` must be sorted ascending and non-empty.
RankingMetrics ranking_metrics(std::span<const std::uint32_t> topk, std::span<const std::uint32_t> relevant,
                               std::size_t k, RecallVariant variant = RecallVariant::truncated);

struct MetricsReport {
  std::string split;
  std::size_t users = 0;
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // aligned with ks
  std::vector<double> ndcg;
  std::string checkpoint_digest;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
  bool all_finite() const;
  std::string to_json(const std::string& config_text = {}) const;
  std::string to_text() const;
};

/// Fills `scores` (users.size() x |I|) for a batch of users.
using Scorer = std::function<void(std::span<const std::uint32_t> users, nd::Tensorf& scores)>;

struct EvalOptions {
  std::vector<std::size_t> ks{10, 20};
  bool exclude_val = true;  // test split: validation items are observed, not candidates
  RecallVariant recall = RecallVariant::truncated;
  std::size_t batch = 256;
  std::size_t max_users = 0;  // 0 evaluates every eligible user
};

/// Items treated as observed when evaluating `split` for `user`.
std::uint8_t observed_mask(data::Split split, bool exclude_val);

MetricsReport evaluate_scorer(const Scorer& scorer, const data::InteractionMatrix& matrix, data::Split split,
                              const EvalOptions& opts);

/// Model scorer: denoise_infer over the observed vector of each user.
Scorer model_scorer(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                    const data::InteractionMatrix& matrix, const graph::ContextStore& contexts,
                    const diffusion::NoiseSchedule& schedule, data::Split split, bool exclude_val,
                    const InferenceOptions& opts);

/// Scores every item by its number of train interactions.
Scorer popularity_scorer(const data::InteractionMatrix& matrix);

MetricsReport evaluate(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                       const data::InteractionMatrix& matrix, const graph::ContextStore& contexts,
                       const diffusion::NoiseSchedule& schedule, data::Split split, const EvalOptions& opts,
                       const InferenceOptions& infer);

}  // namespace cfdiff::eval
