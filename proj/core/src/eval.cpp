// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cfdiff/errors.hpp"
#include "cfdiff/rng.hpp"

namespace cfdiff::eval {

using nd::Tensorf;

RecallVariant parse_recall_variant(const std::string& name) {
  if (name == "truncated") return RecallVariant::truncated;
  if (name == "full") return RecallVariant::full;
  throw ContractError("unknown recall variant '" + name + "'");
}

Tensorf denoise_infer_batch(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                            const Tensorf& u_obs, std::span<const Tensorf> contexts,
                            std::span<const std::uint32_t> users, const diffusion::NoiseSchedule& schedule,
                            const InferenceOptions& opts) {
  if (opts.infer_steps < 0 || opts.infer_steps > schedule.steps()) {
    throw ContractError("infer-steps must lie in [0, " + std::to_string(schedule.steps()) + "]");
  }
  if (users.size() != u_obs.rows()) throw ShapeError("denoise_infer: one user id per row required");
  if (u_obs.cols() != config.num_items) throw ShapeError("denoise_infer: u_obs width differs from |I|");
  const std::size_t batch = u_obs.rows();
  const std::size_t n = u_obs.cols();

  std::vector<Rng> rngs;
  rngs.reserve(batch);
  for (auto u : users) rngs.emplace_back(mix_seed(opts.seed, u));

  Tensorf u = u_obs;
  std::vector<float> noise(n);
  if (opts.infer_steps >= 1) {
    for (std::size_t b = 0; b < batch; ++b) {
      rngs[b].fill_gaussian(noise);
      diffusion::diffuse_to(u_obs.row(b), opts.infer_steps, schedule, noise, u.row(b));
    }
  }
  const int first = std::max(opts.infer_steps, 1);
  std::vector<int> ts(batch);
  for (int t = first; t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), t);
    nd::Tape<float> tape;
    const auto nodes = camae::camae_forward(tape, params, config, u, contexts, ts);
    u = tape.value(nodes.mu);
    if (opts.stochastic && t > 1) {
      const double sigma = std::sqrt(schedule.beta(t));
      for (std::size_t b = 0; b < batch; ++b) {
        rngs[b].fill_gaussian(noise);
        auto row = u.row(b);
        for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<float>(row[i] + sigma * noise[i]);
      }
    }
  }
  return u;
}

std::vector<float> denoise_infer(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                                 std::span<const float> u_obs, const graph::HighOrderContext& context,
                                 std::uint32_t user, const diffusion::NoiseSchedule& schedule,
                                 const InferenceOptions& opts) {
  Tensorf u(1, u_obs.size(), std::vector<float>(u_obs.begin(), u_obs.end()));
  std::vector<Tensorf> ctx;
  for (const auto& hv : context.hops) ctx.emplace_back(1, hv.length, hv.dense());
  const std::uint32_t ids[1] = {user};
  const auto out = denoise_infer_batch(params, config, u, ctx, ids, schedule, opts);
  return {out.data().begin(), out.data().end()};
}

std::vector<std::uint32_t> rank_topk(std::span<const float> scores, std::span<const std::uint32_t> exclude,
                                     std::size_t k) {
  if (k == 0) throw ContractError("rank_topk: K must be >= 1");
  std::vector<std::uint32_t> pool;
  pool.reserve(scores.size());
  std::size_t e = 0;
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    while (e < exclude.size() && exclude[e] < i) ++e;
    if (e < exclude.size() && exclude[e] == i) continue;
    if (std::isnan(scores[i])) throw NumericError("rank_topk: NaN score at item " + std::to_string(i));
    pool.push_back(i);
  }
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  const auto take = std::min(k, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(), better);
  pool.resize(take);
  return pool;
}

RankingMetrics ranking_metrics(std::span<const std::uint32_t> topk, std::span<const std::uint32_t> relevant,
                               std::size_t k, RecallVariant variant) {
  if (relevant.empty()) throw ContractError("ranking_metrics: relevant set is empty");
  if (k == 0) throw ContractError("ranking_metrics: K must be >= 1");
  const auto ideal = std::min(k, relevant.size());
  double hits = 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, topk.size()); ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), topk[r])) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  const double denom = variant == RecallVariant::truncated ? static_cast<double>(ideal)
                                                            : static_cast<double>(relevant.size());
  return {hits / denom, dcg / idcg};
}

namespace {

std::size_t index_of(const std::vector<std::size_t>& ks, std::size_t k) {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ContractError("report has no cutoff K=" + std::to_string(k));
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double MetricsReport::recall_at(std::size_t k) const { return recall.at(index_of(ks, k)); }
double MetricsReport::ndcg_at(std::size_t k) const { return ndcg.at(index_of(ks, k)); }

bool MetricsReport::all_finite() const {
  for (double v : recall) {
    if (!std::isfinite(v)) return false;
  }
  for (double v : ndcg) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string MetricsReport::to_json(const std::string& config_text) const {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["users"] = users;
  j["checkpoint_digest"] = checkpoint_digest;
  nlohmann::ordered_json m;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    m["recall@" + std::to_string(ks[i])] = recall[i];
    m["ndcg@" + std::to_string(ks[i])] = ndcg[i];
  }
  j["metrics"] = m;
  if (!config_text.empty()) j["config"] = config_text;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_text() const {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "split %-6s users %zu\n", split.c_str(), users);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-6s %10s %10s\n", "K", "recall", "ndcg");
  out += buf;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-6zu %10.6f %10.6f\n", ks[i], recall[i], ndcg[i]);
    out += buf;
  }
  return out;
}

std::uint8_t observed_mask(data::Split split, bool exclude_val) {
  if (split == data::Split::test && exclude_val) return data::kTrain | data::kVal;
  return data::kTrain;
}

MetricsReport evaluate_scorer(const Scorer& scorer, const data::InteractionMatrix& matrix, data::Split split,
                              const EvalOptions& opts) {
  if (opts.ks.empty()) throw ContractError("evaluate: no cutoffs");
  const std::uint8_t target = split == data::Split::val ? data::kVal
                              : split == data::Split::test ? data::kTest
                                                           : data::kTrain;
  const auto observed = observed_mask(split, opts.exclude_val);

  std::vector<std::uint32_t> eligible;
  for (std::uint32_t u = 0; u < matrix.num_users(); ++u) {
    if (matrix.row_count(u, target) > 0) eligible.push_back(u);
  }
  if (opts.max_users > 0 && eligible.size() > opts.max_users) eligible.resize(opts.max_users);
  if (eligible.empty()) throw ContractError("evaluate: no eligible users for this split");

  const std::size_t kmax = *std::max_element(opts.ks.begin(), opts.ks.end());
  std::vector<double> recall(opts.ks.size(), 0.0), ndcg(opts.ks.size(), 0.0);
  Tensorf scores;
  for (std::size_t start = 0; start < eligible.size(); start += opts.batch) {
    const auto end = std::min(eligible.size(), start + opts.batch);
    const std::span<const std::uint32_t> users(eligible.data() + start, end - start);
    scores = Tensorf(users.size(), matrix.num_items());
    scorer(users, scores);
    if (scores.rows() != users.size() || scores.cols() != matrix.num_items()) {
      throw ShapeError("evaluate: scorer returned " + nd::to_string(scores.shape()));
    }
    for (std::size_t b = 0; b < users.size(); ++b) {
      const auto excl = matrix.items(users[b], observed);
      const auto rel = matrix.items(users[b], target);
      const auto top = rank_topk(scores.row(b), excl, kmax);
      for (std::size_t i = 0; i < opts.ks.size(); ++i) {
        const auto m = ranking_metrics(top, rel, opts.ks[i], opts.recall);
        recall[i] += m.recall;
        ndcg[i] += m.ndcg;
      }
    }
  }
  MetricsReport report;
  report.split = split == data::Split::val ? "val" : split == data::Split::test ? "test" : "train";
  report.users = eligible.size();
  report.ks = opts.ks;
  for (std::size_t i = 0; i < opts.ks.size(); ++i) {
    report.recall.push_back(recall[i] / static_cast<double>(eligible.size()));
    report.ndcg.push_back(ndcg[i] / static_cast<double>(eligible.size()));
  }
  return report;
}

Scorer model_scorer(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                    const data::InteractionMatrix& matrix, const graph::ContextStore& contexts,
                    const diffusion::NoiseSchedule& schedule, data::Split split, bool exclude_val,
                    const InferenceOptions& opts) {
  const auto observed = observed_mask(split, exclude_val);
  return [&params, &config, &matrix, &contexts, &schedule, observed, opts](std::span<const std::uint32_t> users,
                                                                          Tensorf& scores) {
    Tensorf u_obs(users.size(), matrix.num_items());
    for (std::size_t b = 0; b < users.size(); ++b) matrix.dense_row(users[b], observed, u_obs.row(b));
    std::vector<Tensorf> ctx;
    if (config.variant == camae::Variant::full) ctx = camae::dense_contexts<float>(contexts, users);
    scores = denoise_infer_batch(params, config, u_obs, ctx, users, schedule, opts);
  };
}

Scorer popularity_scorer(const data::InteractionMatrix& matrix) {
  std::vector<float> counts(matrix.num_items(), 0.0f);
  for (std::size_t u = 0; u < matrix.num_users(); ++u) {
    for (auto i : matrix.items(u, data::kTrain)) counts[i] += 1.0f;
  }
  return [counts = std::move(counts)](std::span<const std::uint32_t> users, Tensorf& scores) {
    for (std::size_t b = 0; b < users.size(); ++b) std::copy(counts.begin(), counts.end(), scores.row(b).begin());
  };
}

MetricsReport evaluate(const camae::CamAeParameters<float>& params, const camae::CamAeConfig& config,
                       const data::InteractionMatrix& matrix, const graph::ContextStore& contexts,
                       const diffusion::NoiseSchedule& schedule, data::Split split, const EvalOptions& opts,
                       const InferenceOptions& infer) {
  return evaluate_scorer(model_scorer(params, config, matrix, contexts, schedule, split, opts.exclude_val, infer),
                         matrix, split, opts);
}

}  // namespace cfdiff::eval
