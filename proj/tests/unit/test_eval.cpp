// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cfdiff/config.hpp"
#include "cfdiff/errors.hpp"
#include "cfdiff/eval.hpp"
#include "cfdiff/graph.hpp"
#include "support.hpp"

using namespace cfdiff;
using namespace cfdiff::eval;
using nd::Tensorf;

namespace {

// Full stable sort by (score desc, index asc), then the first k non-excluded.
std::vector<std::uint32_t> sort_oracle(const std::vector<float>& s, const std::vector<std::uint32_t>& excl,
                                       std::size_t k) {
  std::vector<std::uint32_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  std::vector<std::uint32_t> out;
  for (auto i : idx) {
    if (std::find(excl.begin(), excl.end(), i) != excl.end()) continue;
    if (out.size() == k) break;
    out.push_back(i);
  }
  return out;
}

RankingMetrics metrics_oracle(const std::vector<std::uint32_t>& top, const std::vector<std::uint32_t>& rel,
                              std::size_t k) {
  double hits = 0.0, dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < top.size() && r < k; ++r) {
    if (std::count(rel.begin(), rel.end(), top[r])) {
      hits += 1;
      dcg += std::log(2.0) / std::log(r + 2.0);
    }
  }
  const std::size_t ideal = std::min(k, rel.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += std::log(2.0) / std::log(r + 2.0);
  return {hits / static_cast<double>(ideal), dcg / idcg};
}

struct Model {
  RunConfig run;
  data::InteractionMatrix matrix;
  graph::ContextStore store;
  camae::CamAeConfig cfg;
  camae::CamAeParameters<float> params;
  diffusion::NoiseSchedule sched;
};

Model small_model() {
  Model m;
  m.run.k = 8;
  m.run.d = 4;
  m.run.layers = 1;
  m.run.steps = 10;
  m.matrix = data::split_holdout(test::clustered_log(40, 30, 2, 10, 5), {}, 1);
  m.store = graph::ContextStore::build(graph::build_bipartite(m.matrix), 3);
  m.cfg = model_config(m.run, 40, 30);
  m.params = camae::init_params<float>(m.cfg, 2);
  m.sched = make_schedule(m.run);
  return m;
}

}  // namespace

TEST(RankTopK, TiesBreakByIndexAndExclusion) {
  const std::vector<float> s{0.5f, 0.9f, 0.5f, 0.9f, 0.1f};
  const std::vector<std::uint32_t> none, ex{1};
  EXPECT_EQ(rank_topk(s, none, 3), (std::vector<std::uint32_t>{1, 3, 0}));
  EXPECT_EQ(rank_topk(s, ex, 3), (std::vector<std::uint32_t>{3, 0, 2}));
  EXPECT_EQ(rank_topk(s, ex, 10).size(), 4u);
  EXPECT_THROW(rank_topk(s, none, 0), ContractError);
  const std::vector<float> bad{0.1f, std::nanf("")};
  EXPECT_THROW(rank_topk(bad, none, 1), NumericError);
}

// Property: partial-sort top-K equals a full stable sort.
TEST(RankTopKProperty, MatchesSortOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(60);
    std::vector<float> s(n);
    for (auto& x : s) x = static_cast<float>(rng.uniform_index(8)) / 4.0f;  // many ties
    std::vector<std::uint32_t> ex;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (rng.uniform01() < 0.2) ex.push_back(i);
    }
    const std::size_t k = 1 + rng.uniform_index(20);
    ASSERT_EQ(rank_topk(s, ex, k), sort_oracle(s, ex, k));
  }
}

TEST(Metrics, WorkedExamples) {
  const std::vector<std::uint32_t> top{4, 7, 1}, rel{7};
  const auto m = ranking_metrics(top, rel, 3);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_NEAR(m.ndcg, 0.6309, 1e-4);
  const std::vector<std::uint32_t> rel2{1, 4, 9, 11};
  const auto t = ranking_metrics(top, rel2, 2, RecallVariant::truncated);
  EXPECT_DOUBLE_EQ(t.recall, 0.5);
  const auto f = ranking_metrics(top, rel2, 2, RecallVariant::full);
  EXPECT_DOUBLE_EQ(f.recall, 0.25);
  EXPECT_NEAR(t.ndcg, 1.0 / (1.0 + 1.0 / std::log2(3.0)), 1e-12);
  EXPECT_THROW(ranking_metrics(top, {}, 2), ContractError);
  EXPECT_EQ(parse_recall_variant("full"), RecallVariant::full);
}

// Property: metrics agree with a brute-force computation and lie in [0, 1].
TEST(MetricsProperty, MatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 5 + rng.uniform_index(40);
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    rng.shuffle(std::span<std::uint32_t>(all));
    const std::size_t k = 1 + rng.uniform_index(n);
    std::vector<std::uint32_t> top(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    rng.shuffle(std::span<std::uint32_t>(all));
    std::vector<std::uint32_t> rel(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(1 + rng.uniform_index(n / 2)));
    std::sort(rel.begin(), rel.end());
    const auto got = ranking_metrics(top, rel, k);
    const auto want = metrics_oracle(top, rel, k);
    EXPECT_NEAR(got.recall, want.recall, 1e-12);
    EXPECT_NEAR(got.ndcg, want.ndcg, 1e-12);
    EXPECT_GE(got.ndcg, 0.0);
    EXPECT_LE(got.ndcg, 1.0 + 1e-12);
    EXPECT_LE(got.recall, 1.0);
  }
}

TEST(Evaluate, PerfectScorerScoresOne) {
  const auto m = data::split_holdout(test::clustered_log(60, 50, 3, 12, 2), {}, 3);
  const Scorer perfect = [&](std::span<const std::uint32_t> users, Tensorf& s) {
    for (std::size_t b = 0; b < users.size(); ++b) {
      for (auto i : m.items(users[b], data::kTest)) s(b, i) = 1.0f;
    }
  };
  const auto r = evaluate_scorer(perfect, m, data::Split::test, {});
  EXPECT_DOUBLE_EQ(r.recall_at(10), 1.0);
  EXPECT_DOUBLE_EQ(r.ndcg_at(20), 1.0);
  EXPECT_TRUE(r.all_finite());
  EXPECT_THROW(r.recall_at(5), ContractError);
}

// A uniformly random ranking has E[hits@K] = K |rel| / |candidates|.
TEST(Evaluate, RandomScorerMatchesAnalyticExpectation) {
  const auto m = data::split_holdout(test::clustered_log(2000, 200, 4, 20, 9), {}, 4);
  Rng rng(10);
  const Scorer random = [&](std::span<const std::uint32_t> users, Tensorf& s) {
    for (std::size_t b = 0; b < users.size(); ++b) {
      for (auto& x : s.row(b)) x = static_cast<float>(rng.uniform01());
    }
  };
  EvalOptions opts;
  opts.ks = {20};
  opts.recall = RecallVariant::full;
  const auto r = evaluate_scorer(random, m, data::Split::test, opts);
  double expect = 0.0, var = 0.0;
  std::size_t users = 0;
  for (std::uint32_t u = 0; u < m.num_users(); ++u) {
    const double rel = static_cast<double>(m.row_count(u, data::kTest));
    if (rel == 0) continue;
    const double cand = 200.0 - static_cast<double>(m.row_count(u, data::kTrain | data::kVal));
    const double kk = std::min(20.0, cand);
    expect += kk / cand;
    // hypergeometric variance of hits, divided by |rel|^2
    var += kk * (rel / cand) * (1 - rel / cand) * (cand - kk) / (cand - 1) / (rel * rel);
    ++users;
  }
  expect /= static_cast<double>(users);
  const double se = std::sqrt(var) / static_cast<double>(users);
  EXPECT_NEAR(r.recall_at(20), expect, 4.0 * se);
}

TEST(Evaluate, MonotoneTransformDoesNotChangeMetrics) {
  const auto m = data::split_holdout(test::clustered_log(80, 60, 3, 12, 4), {}, 5);
  const auto pop = popularity_scorer(m);
  const Scorer squashed = [&](std::span<const std::uint32_t> users, Tensorf& s) {
    pop(users, s);
    for (auto& x : s.data()) x = 3.0f * std::sqrt(x) + 1.0f;
  };
  const auto a = evaluate_scorer(pop, m, data::Split::test, {});
  const auto b = evaluate_scorer(squashed, m, data::Split::test, {});
  EXPECT_EQ(a.recall, b.recall);
  EXPECT_EQ(a.ndcg, b.ndcg);
}

TEST(Evaluate, ObservedItemsAreNeverRanked) {
  const auto m = data::split_holdout(test::clustered_log(50, 40, 2, 12, 6), {}, 6);
  const Scorer prefers_seen = [&](std::span<const std::uint32_t> users, Tensorf& s) {
    for (std::size_t b = 0; b < users.size(); ++b) {
      for (auto i : m.items(users[b], data::kTrain | data::kVal)) s(b, i) = 100.0f;
      for (auto i : m.items(users[b], data::kTest)) s(b, i) = 1.0f;
    }
  };
  EXPECT_DOUBLE_EQ(evaluate_scorer(prefers_seen, m, data::Split::test, {}).recall_at(10), 1.0);
  EXPECT_EQ(observed_mask(data::Split::test, true), data::kTrain | data::kVal);
  EXPECT_EQ(observed_mask(data::Split::test, false), data::kTrain);
  EXPECT_EQ(observed_mask(data::Split::val, true), data::kTrain);
}

// Property: untruncated recall never decreases with K.
TEST(EvaluateProperty, RecallMonotoneInK) {
  const auto m = data::split_holdout(test::clustered_log(100, 80, 4, 15, 7), {}, 7);
  EvalOptions opts;
  opts.ks = {1, 5, 10, 20, 40};
  opts.recall = RecallVariant::full;
  const auto r = evaluate_scorer(popularity_scorer(m), m, data::Split::test, opts);
  for (std::size_t i = 1; i < r.ks.size(); ++i) EXPECT_GE(r.recall[i], r.recall[i - 1]);
}

TEST(Infer, ZeroStepsIsOneForwardPassAtTimestepOne) {
  const auto m = small_model();
  std::vector<float> u(30);
  m.matrix.dense_row(3, data::kTrain, u);
  InferenceOptions opts;
  opts.infer_steps = 0;
  const auto got = denoise_infer(m.params, m.cfg, u, m.store.at(3), 3, m.sched, opts);
  const auto want = camae::camae_forward_single<float>(m.params, m.cfg, u, m.store.at(3), 1);
  EXPECT_EQ(got, want);
  opts.infer_steps = 11;
  EXPECT_THROW(denoise_infer(m.params, m.cfg, u, m.store.at(3), 3, m.sched, opts), ContractError);
}

// Corrupt with the per-user stream, then substitute the mean T' times.
TEST(Infer, MatchesUnrolledLoop) {
  const auto m = small_model();
  std::vector<float> u0(30);
  m.matrix.dense_row(5, data::kTrain, u0);
  InferenceOptions opts;
  opts.infer_steps = 3;
  opts.seed = 42;
  const auto got = denoise_infer(m.params, m.cfg, u0, m.store.at(5), 5, m.sched, opts);

  Rng rng(mix_seed(42, 5));
  std::vector<float> noise(30), x(30);
  rng.fill_gaussian(noise);
  for (std::size_t i = 0; i < 30; ++i) {
    x[i] = static_cast<float>(std::sqrt(m.sched.alpha_bar(3)) * u0[i] +
                              std::sqrt(1.0 - m.sched.alpha_bar(3)) * noise[i]);
  }
  for (int t = 3; t >= 1; --t) x = camae::camae_forward_single<float>(m.params, m.cfg, x, m.store.at(5), t);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(got[i], x[i], 1e-5);
}

TEST(Infer, BatchRowsMatchSingleUser) {
  const auto m = small_model();
  const std::vector<std::uint32_t> users{1, 4, 7};
  Tensorf u(3, 30);
  for (std::size_t b = 0; b < 3; ++b) m.matrix.dense_row(users[b], data::kTrain, u.row(b));
  const auto ctx = camae::dense_contexts<float>(m.store, users);
  InferenceOptions opts;
  opts.infer_steps = 4;
  opts.stochastic = true;
  const auto batch = denoise_infer_batch(m.params, m.cfg, u, ctx, users, m.sched, opts);
  const auto single = denoise_infer(m.params, m.cfg, u.row(1), m.store.at(4), 4, m.sched, opts);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(batch(1, i), single[i], 1e-5);
}

TEST(Evaluate, ModelEvaluationIsDeterministic) {
  const auto m = small_model();
  EvalOptions opts;
  opts.batch = 7;
  const InferenceOptions infer{2, false, 3};
  const auto a = evaluate(m.params, m.cfg, m.matrix, m.store, m.sched, data::Split::test, opts, infer);
  const auto b = evaluate(m.params, m.cfg, m.matrix, m.store, m.sched, data::Split::test, opts, infer);
  EXPECT_EQ(a.recall, b.recall);
  EXPECT_EQ(a.ndcg, b.ndcg);
  opts.batch = 256;
  const auto c = evaluate(m.params, m.cfg, m.matrix, m.store, m.sched, data::Split::test, opts, infer);
  for (std::size_t i = 0; i < a.ks.size(); ++i) EXPECT_NEAR(a.ndcg[i], c.ndcg[i], 1e-6);
  const auto json = a.to_json("k = 8\n");
  EXPECT_NE(json.find("\"ndcg@10\""), std::string::npos);
  EXPECT_NE(json.find("\"split\": \"test\""), std::string::npos);
  EXPECT_NE(a.to_text().find("recall"), std::string::npos);
}
