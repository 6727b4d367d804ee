// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include <benchmark/benchmark.h>

#include "cfdiff/bench.hpp"
#include "cfdiff/camae.hpp"
#include "cfdiff/eval.hpp"
#include "cfdiff/graph.hpp"
#include "cfdiff/rng.hpp"
#include "cfdiff/schedule.hpp"
#include "cfdiff/train.hpp"

using namespace cfdiff;

namespace {

struct Fixture {
  data::InteractionMatrix matrix;
  graph::ContextStore store;
  camae::CamAeConfig model;
  diffusion::NoiseSchedule schedule;
  std::vector<std::uint32_t> users;
};

Fixture make_fixture(std::size_t num_users, std::size_t num_items, std::size_t batch) {
  Fixture f;
  f.matrix = bench::synth_interactions(num_users, num_items, 0.99, 3);
  for (std::uint32_t u = 0; u < batch && u < f.matrix.num_users(); ++u) f.users.push_back(u);
  f.store = graph::ContextStore::build_subset(graph::build_bipartite(f.matrix), 3, f.users);
  f.model.num_users = f.matrix.num_users();
  f.model.num_items = f.matrix.num_items();
  f.model.k = 64;
  f.model.d = 8;
  f.model.layers = 1;
  f.model.hops = 3;
  f.model.alpha = camae::parse_alpha("0.7", 3);
  f.schedule = diffusion::build_schedule(100, 1e-4, 0.02);
  return f;
}

// One optimizer step; the varied argument is |I| with |U| fixed.
void BM_TrainStepItems(benchmark::State& state) {
  const auto f = make_fixture(2000, static_cast<std::size_t>(state.range(0)), 64);
  auto params = camae::init_params<float>(f.model, 1);
  const auto shapes = params.shapes();
  nd::AdamState<float> adam(nd::AdamConfig{}, shapes);
  Rng rng(5);
  for (auto _ : state) {
    const auto batch = train::make_batch(f.matrix, f.store, f.model, f.users, f.schedule, train::LossWeighting::vlb, rng);
    benchmark::DoNotOptimize(train::train_step(params, f.model, batch, adam));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_TrainStepItems)->RangeMultiplier(2)->Range(1000, 16000)->Complexity()->Unit(benchmark::kMillisecond);

// Context precomputation for one user (BFS to hop 3 and normalization).
void BM_EncodeContext(benchmark::State& state) {
  const auto m = bench::synth_interactions(static_cast<std::size_t>(state.range(0)), 2000, 0.99, 4);
  const auto g = graph::build_bipartite(m);
  std::uint32_t u = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(graph::encode_context(g, u, 3));
    u = (u + 1) % static_cast<std::uint32_t>(m.num_users());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EncodeContext)->RangeMultiplier(2)->Range(1000, 16000)->Complexity();

// Corrupt-then-denoise inference for a batch of 64 users.
void BM_DenoiseInfer(benchmark::State& state) {
  const auto f = make_fixture(2000, 2000, 64);
  const auto params = camae::init_params<float>(f.model, 2);
  nd::Tensorf u_obs(f.users.size(), f.model.num_items);
  for (std::size_t r = 0; r < f.users.size(); ++r) f.matrix.dense_row(f.users[r], data::kTrain, u_obs.row(r));
  const auto ctx = camae::dense_contexts<float>(f.store, f.users);
  eval::InferenceOptions opts;
  opts.infer_steps = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::denoise_infer_batch(params, f.model, u_obs, ctx, f.users, f.schedule, opts));
  }
}
BENCHMARK(BM_DenoiseInfer)->Arg(0)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

// Full softmax attention against the rank-k projected form at n = 2048.
void BM_FullAttention(benchmark::State& state) {
  const std::size_t n = 2048, d = 16;
  Rng rng(6);
  std::vector<double> q(n * d), k(n * d), v(n * d);
  rng.fill_gaussian(q);
  rng.fill_gaussian(k);
  rng.fill_gaussian(v);
  for (auto _ : state) benchmark::DoNotOptimize(bench::full_attention(q, k, v, n, d));
}
BENCHMARK(BM_FullAttention)->Unit(benchmark::kMillisecond);

void BM_ProjectedAttention(benchmark::State& state) {
  const std::size_t n = 2048, d = 16, r = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  std::vector<double> q(n * d), k(n * d), v(n * d), e(r * n), dm(n * r);
  rng.fill_gaussian(q);
  rng.fill_gaussian(k);
  rng.fill_gaussian(v);
  rng.fill_gaussian(e);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) dm[j * r + i] = e[i * n + j];
  }
  for (auto _ : state) benchmark::DoNotOptimize(bench::projected_attention(q, k, v, e, e, e, dm, n, d, r));
}
BENCHMARK(BM_ProjectedAttention)->Arg(32)->Arg(128)->Arg(305)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
