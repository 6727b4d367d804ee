// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "cfdiff/camae.hpp"
#include "cfdiff/dataset.hpp"
#include "cfdiff/errors.hpp"
#include "cfdiff/gradcheck.hpp"
#include "cfdiff/graph.hpp"
#include "cfdiff/rng.hpp"
#include "cfdiff/schedule.hpp"
#include "cfdiff/tape.hpp"
#include "cfdiff/train.hpp"
#include "oracles.hpp"

using namespace cfdiff;
using namespace cfdiff::nd;

namespace {

Tensord gaussian(std::size_t r, std::size_t c, Rng& rng) {
  Tensord t(r, c);
  rng.fill_gaussian(t.data());
  return t;
}

struct Micro {
  camae::CamAeConfig cfg;
  graph::ContextStore store;
  std::vector<std::uint32_t> users{0, 2, 5};
};

Micro micro_model(camae::Variant variant = camae::Variant::full, bool no_ae = false) {
  Micro m;
  m.cfg.num_users = 6;
  m.cfg.num_items = 8;
  m.cfg.k = 4;
  m.cfg.d = 2;
  m.cfg.layers = 1;
  m.cfg.hops = 3;
  m.cfg.alpha = {0.7, 0.3};
  m.cfg.variant = variant;
  m.cfg.no_ae = no_ae;
  Rng rng(5);
  auto edges = oracle::random_edges(6, 8, 0.35, rng);
  for (std::uint32_t u = 0; u < 6; ++u) edges.emplace_back(u, u);
  m.store = graph::ContextStore::build(graph::BipartiteGraph(6, 8, edges), 3);
  return m;
}

GradCheckReport check_micro(const Micro& m, std::uint64_t seed) {
  auto params = camae::init_params<double>(m.cfg, seed);
  Rng rng(seed + 100);
  const auto u_t = gaussian(m.users.size(), m.cfg.num_items, rng);
  const auto target = gaussian(m.users.size(), m.cfg.num_items, rng);
  const auto ctx = camae::dense_contexts<double>(m.store, m.users);
  const std::vector<int> ts{3, 1, 7};
  const std::vector<double> w{1.0, 0.5, 2.0};

  auto build = [&](Tape<double>& tape) {
    const auto fwd = camae::camae_forward<double>(tape, params, m.cfg, u_t, ctx, ts);
    return std::make_pair(tape.mse(fwd.mu, tape.constant(target), w), fwd.params);
  };
  Tape<double> tape;
  const auto [loss, ids] = build(tape);
  const auto grads = tape.backward(loss);
  std::vector<Tensord> analytic;
  for (auto id : ids) analytic.push_back(grads.at(id));
  std::vector<std::string> names(params.names().begin(), params.names().end());
  const auto ptrs = params.pointers();
  GradCheckOptions opts;
  opts.eps = 1e-5;
  return gradient_check(
      [&] {
        Tape<double> t;
        return t.value(build(t).first)(0, 0);
      },
      ptrs, analytic, names, opts);
}

}  // namespace

TEST(GradCheck, LinearModelIsExact) {
  Rng rng(1);
  Tensord w = gaussian(3, 4, rng);
  const auto x = gaussian(4, 5, rng), y = gaussian(3, 5, rng);
  auto loss_of = [&](Tape<double>& t, NodeId pw) { return t.mse(t.matmul(pw, t.constant(x)), t.constant(y)); };
  Tape<double> tape;
  const auto pw = tape.parameter(w);
  const auto g = tape.backward(loss_of(tape, pw)).at(pw);
  Tensord* ptrs[] = {&w};
  const Tensord analytic[] = {g};
  const std::string names[] = {"W"};
  const auto rep = gradient_check(
      [&] {
        Tape<double> t;
        return t.value(loss_of(t, t.parameter(w)))(0, 0);
      },
      ptrs, analytic, names);
  EXPECT_LE(rep.max_rel_error, 1e-6);
  EXPECT_EQ(rep.per_param.at(0).checked, 12u);
}

TEST(GradCheck, SoftmaxLayer) {
  Rng rng(2);
  Tensord w = gaussian(4, 4, rng);
  const auto x = gaussian(4, 4, rng), y = gaussian(4, 4, rng);
  auto loss_of = [&](Tape<double>& t, NodeId pw) {
    return t.mse(t.row_softmax(t.matmul(t.constant(x), pw)), t.constant(y));
  };
  Tape<double> tape;
  const auto pw = tape.parameter(w);
  const auto g = tape.backward(loss_of(tape, pw)).at(pw);
  Tensord* ptrs[] = {&w};
  const Tensord analytic[] = {g};
  const std::string names[] = {"W"};
  const auto rep = gradient_check(
      [&] {
        Tape<double> t;
        return t.value(loss_of(t, t.parameter(w)))(0, 0);
      },
      ptrs, analytic, names);
  EXPECT_LE(rep.max_rel_error, 1e-4);
}

TEST(GradCheck, DetectsAWrongGradientAndLocatesIt) {
  Tensord w(2, 2, 1.0);
  Tensord* ptrs[] = {&w};
  Tensord bad(2, 2, 0.0);
  bad(1, 0) = 5.0;  // true gradient of sum(w^2) is 2w = 2 everywhere
  const Tensord analytic[] = {bad};
  const std::string names[] = {"W"};
  const auto rep = gradient_check(
      [&] {
        double s = 0.0;
        for (double v : w.data()) s += v * v;
        return s;
      },
      ptrs, analytic, names);
  EXPECT_GT(rep.max_rel_error, 0.5);
  EXPECT_EQ(rep.worst().name, "W");
  EXPECT_EQ(w, Tensord(2, 2, 1.0));  // parameters restored
}

TEST(GradCheck, SubsamplesLargeTensors) {
  Tensord w(50, 50, 0.5);
  Tensord* ptrs[] = {&w};
  Tensord g(50, 50, 1.0);
  const Tensord analytic[] = {g};
  const std::string names[] = {"W"};
  GradCheckOptions opts;
  opts.max_entries = 100;
  const auto rep = gradient_check(
      [&] {
        double s = 0.0;
        for (double v : w.data()) s += v;
        return s;
      },
      ptrs, analytic, names, opts);
  EXPECT_EQ(rep.per_param.at(0).checked, 100u);
  EXPECT_LE(rep.max_rel_error, 1e-6);
}

TEST(GradCheck, MicroCamAeFullModel) {
  const auto rep = check_micro(micro_model(), 3);
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst().name;
  EXPECT_EQ(rep.per_param.size(), camae::init_params<double>(micro_model().cfg, 3).size());
}

TEST(GradCheck, MicroCamAeVariants) {
  {
    const auto rep = check_micro(micro_model(camae::Variant::self_attn), 4);
    EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst().name << " " << rep.worst().worst_row << "," << rep.worst().worst_col << " a=" << rep.worst().analytic << " n=" << rep.worst().numeric;
  }
  EXPECT_LE(check_micro(micro_model(camae::Variant::no_cross_attn), 5).max_rel_error, 1e-4);
  EXPECT_LE(check_micro(micro_model(camae::Variant::full, true), 6).max_rel_error, 1e-4);
}

TEST(GradCheck, DiffusionLossUnderFrozenNoise) {
  const auto m = micro_model();
  const auto matrix = data::all_train(data::make_log(6, 8, [] {
    std::vector<data::Interaction> r;
    for (std::uint32_t u = 0; u < 6; ++u) {
      r.push_back({u, u, std::nullopt});
      r.push_back({u, (u + 3) % 8, std::nullopt});
    }
    return r;
  }()));
  const auto sched = diffusion::build_schedule(10, 1e-4, 0.02);
  Rng rng(8);
  const auto batch = train::make_batch(matrix, m.store, m.cfg, m.users, sched, train::LossWeighting::vlb, rng);
  auto params = camae::init_params<double>(m.cfg, 9);
  std::vector<Tensord> ctx;
  for (const auto& c : batch.contexts) ctx.push_back(c.cast<double>());
  const auto u_t = batch.u_t.cast<double>();
  const auto target = batch.target.cast<double>();

  auto build = [&](Tape<double>& tape) {
    const auto fwd = camae::camae_forward<double>(tape, params, m.cfg, u_t, ctx, batch.timesteps);
    return std::make_pair(tape.mse(fwd.mu, tape.constant(target), batch.weights), fwd.params);
  };
  Tape<double> tape;
  const auto [loss, ids] = build(tape);
  EXPECT_NEAR(tape.value(loss)(0, 0), train::batch_loss(params, m.cfg, batch), 1e-12);
  const auto grads = tape.backward(loss);
  std::vector<Tensord> analytic;
  for (auto id : ids) analytic.push_back(grads.at(id));
  std::vector<std::string> names(params.names().begin(), params.names().end());
  GradCheckOptions opts;
  opts.eps = 1e-5;
  const auto rep = gradient_check(
      [&] {
        Tape<double> t;
        return t.value(build(t).first)(0, 0);
      },
      params.pointers(), analytic, names, opts);
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst().name;
}

// ReLU kinks make finite differences unreliable once a perturbation can
// flip a unit, so the smooth activation is used with the wider stencil.
TEST(GradCheck, FourPointStencilOnSmoothDiffusionProblem) {
  for (std::size_t layers : {1u, 2u}) {
    for (bool t_embed : {true, false}) {
      camae::CamAeConfig cfg;
      cfg.num_users = 6;
      cfg.num_items = 8;
      cfg.k = 8;
      cfg.d = 4;
      cfg.layers = layers;
      cfg.hops = 3;
      cfg.alpha = {0.7, 0.3};
      cfg.t_embed = t_embed;
      cfg.activation = camae::Activation::tanh;
      const auto prob = train::make_gradcheck_problem(cfg, 10, layers * 10 + t_embed);
      auto params = camae::init_params<double>(cfg, 3);
      GradCheckOptions opts;
      opts.stencil = 4;
      const auto rep = train::check_batch_gradients(params, cfg, prob.batch, opts);
      EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst().name;
    }
  }
  GradCheckOptions bad;
  bad.stencil = 3;
  Tensord w(1, 1, 1.0);
  Tensor<double>* const ptrs[] = {&w};
  const Tensord grads[] = {Tensord(1, 1, 2.0)};
  const std::string names[] = {"w"};
  EXPECT_THROW(gradient_check([&] { return w(0, 0) * w(0, 0); }, ptrs, grads, names, bad), ContractError);
}
