// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <new>

#include <Eigen/Dense>

#include "cfdiff/camae.hpp"
#include "cfdiff/errors.hpp"
#include "cfdiff/graph.hpp"
#include "cfdiff/rng.hpp"
#include "cfdiff/schedule.hpp"
#include "cfdiff/train.hpp"

namespace cfdiff::bench {

namespace {

/// Ascending column indices drawn with probability p each, by geometric skips.
std::vector<std::uint32_t> bernoulli_row(std::size_t n, double p, Rng& rng) {
  std::vector<std::uint32_t> out;
  if (p >= 1.0) {
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  const double log_q = std::log1p(-p);
  double pos = -1.0;
  while (true) {
    const double u = 1.0 - rng.uniform01();  // (0, 1]
    pos += 1.0 + std::floor(std::log(u) / log_q);
    if (pos >= static_cast<double>(n)) break;
    out.push_back(static_cast<std::uint32_t>(pos));
  }
  return out;
}

}  // namespace

data::InteractionMatrix synth_interactions(std::size_t num_users, std::size_t num_items, double sparsity,
                                           std::uint64_t seed) {
  if (!(sparsity > 0.0 && sparsity < 1.0)) throw ContractError("synth_interactions: sparsity must lie in (0, 1)");
  if (num_items == 0) throw ContractError("synth_interactions: need at least one item");
  const double p = 1.0 - sparsity;
  std::vector<std::uint64_t> offsets{0};
  std::vector<std::uint32_t> items;
  std::size_t kept = 0;
  for (std::size_t u = 0; u < num_users; ++u) {
    Rng rng(mix_seed(seed, u));
    auto row = bernoulli_row(num_items, p, rng);
    if (row.empty()) {
      Rng retry(mix_seed(seed ^ 0x5eedull, u));
      row = bernoulli_row(num_items, p, retry);
    }
    if (row.empty()) continue;
    items.insert(items.end(), row.begin(), row.end());
    offsets.push_back(items.size());
    ++kept;
  }
  std::vector<data::Split> tags(items.size(), data::Split::train);
  data::InteractionMatrix m(kept, num_items, std::move(offsets), std::move(items), std::move(tags));
  m.set_excluded_users(num_users - kept);
  return m;
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_line: need >= 2 paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("fit_line: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return f;
}

double t_critical_95(std::size_t dof) {
  static constexpr double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                     2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                     2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (dof == 0) throw ContractError("t_critical_95: zero degrees of freedom");
  if (dof <= 30) return table[dof - 1];
  return 1.96 + 2.4 / static_cast<double>(dof);
}

QuadraticFit fit_quadratic(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 4) throw ContractError("fit_quadratic: need >= 4 paired points");
  const auto n = static_cast<Eigen::Index>(x.size());
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) throw ContractError("fit_quadratic: x values are all zero");
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = x[static_cast<std::size_t>(i)] / scale;
    X(i, 0) = 1.0;
    X(i, 1) = s;
    X(i, 2) = s * s;
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::Matrix3d xtx = X.transpose() * X;
  const Eigen::Matrix3d inv = xtx.inverse();
  const Eigen::Vector3d beta = inv * (X.transpose() * Y);
  const Eigen::VectorXd resid = Y - X * beta;
  const auto dof = static_cast<std::size_t>(n - 3);
  const double sigma2 = resid.squaredNorm() / static_cast<double>(dof);
  QuadraticFit f;
  f.c0 = beta(0);
  f.c1 = beta(1) / scale;
  f.c2 = beta(2) / (scale * scale);
  const double se_scaled = std::sqrt(sigma2 * inv(2, 2));
  f.c2_stderr = se_scaled / (scale * scale);
  f.t_stat = se_scaled > 0.0 ? beta(2) / se_scaled : (beta(2) == 0.0 ? 0.0 : INFINITY);
  f.t_critical = t_critical_95(dof);
  f.c2_significant = std::abs(f.t_stat) > f.t_critical;
  return f;
}

std::string ScalingRun::to_csv() const {
  std::string out = dimension == Dimension::users ? "users,items,seconds_per_iter\n" : "items,users,seconds_per_iter\n";
  char buf[96];
  for (std::size_t i = 0; i < seconds_per_iter.size(); ++i) {
    const auto a = dimension == Dimension::users ? users[i] : items[i];
    const auto b = dimension == Dimension::users ? items[i] : users[i];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", a, b, seconds_per_iter[i]);
    out += buf;
  }
  return out;
}

namespace {

double time_one_size(std::size_t num_users, std::size_t num_items, const ScalingConfig& cfg, std::size_t& users_out) {
  const auto matrix = synth_interactions(num_users, num_items, cfg.sparsity, mix_seed(cfg.seed, num_users * 7919 + num_items));
  users_out = matrix.num_users();
  if (matrix.num_users() == 0) throw ContractError("time_scaling: synthetic matrix has no users");

  const std::size_t total_iters = static_cast<std::size_t>(cfg.warmup + cfg.iterations);
  std::vector<std::uint32_t> order(matrix.num_users());
  for (std::uint32_t u = 0; u < order.size(); ++u) order[u] = u;
  Rng rng(mix_seed(cfg.seed, 0xb0));
  rng.shuffle(std::span<std::uint32_t>(order));
  std::vector<std::vector<std::uint32_t>> batches(total_iters);
  std::vector<std::uint32_t> needed;
  std::size_t cursor = 0;
  for (auto& b : batches) {
    for (std::size_t j = 0; j < cfg.batch; ++j) {
      b.push_back(order[cursor % order.size()]);
      ++cursor;
    }
    needed.insert(needed.end(), b.begin(), b.end());
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());

  const auto graph = graph::build_bipartite(matrix);
  const auto store = graph::ContextStore::build_subset(graph, cfg.hops, needed);

  camae::CamAeConfig model;
  model.num_users = matrix.num_users();
  model.num_items = matrix.num_items();
  model.k = cfg.k;
  model.d = cfg.d;
  model.layers = cfg.layers;
  model.hops = cfg.hops;
  model.alpha = camae::parse_alpha("0.7", cfg.hops);
  auto params = camae::init_params<float>(model, cfg.seed);
  const auto shapes = params.shapes();
  nd::AdamState<float> adam(nd::AdamConfig{}, shapes);
  const auto schedule = diffusion::build_schedule(cfg.steps, 1e-4, 0.02);

  std::vector<double> times;
  for (std::size_t it = 0; it < total_iters; ++it) {
    const auto start = std::chrono::steady_clock::now();
    const auto batch = train::make_batch(matrix, store, model, batches[it], schedule, train::LossWeighting::vlb, rng);
    train::train_step(params, model, batch, adam);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (it >= static_cast<std::size_t>(cfg.warmup)) times.push_back(s);
  }
  std::sort(times.begin(), times.end());
  const auto mid = times.size() / 2;
  return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

}  // namespace

ScalingRun time_scaling(Dimension dimension, std::span<const std::size_t> sizes, std::size_t fixed_other,
                        const ScalingConfig& config) {
  if (sizes.size() < 4) throw ContractError("time_scaling: need at least 4 sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw ContractError("time_scaling: sizes must be strictly increasing");
  }
  if (config.iterations < 1 || config.warmup < 0) throw ContractError("time_scaling: bad iteration counts");
  ScalingRun run;
  run.dimension = dimension;
  for (auto s : sizes) {
    const std::size_t nu = dimension == Dimension::users ? s : fixed_other;
    const std::size_t ni = dimension == Dimension::users ? fixed_other : s;
    try {
      std::size_t actual_users = 0;
      const double sec = time_one_size(nu, ni, config, actual_users);
      run.sizes.push_back(s);
      run.users.push_back(actual_users);
      run.items.push_back(ni);
      run.seconds_per_iter.push_back(sec);
    } catch (const std::bad_alloc&) {
      run.partial = true;
      run.failure = "out of memory at size " + std::to_string(s);
      break;
    }
  }
  if (run.seconds_per_iter.size() >= 2) {
    std::vector<double> x;
    for (std::size_t i = 0; i < run.sizes.size(); ++i) {
      x.push_back(static_cast<double>(dimension == Dimension::users ? run.users[i] : run.items[i]));
    }
    run.fit = fit_line(x, run.seconds_per_iter);
    if (x.size() >= 4) run.quadratic = fit_quadratic(x, run.seconds_per_iter);
  }
  return run;
}

double ProbeResult::fraction_within(std::size_t i, double bound) const {
  const auto& dev = deviations.at(i);
  if (dev.empty()) return 0.0;
  const auto ok = std::count_if(dev.begin(), dev.end(), [bound](double v) { return v <= bound; });
  return static_cast<double>(ok) / static_cast<double>(dev.size());
}

std::string ProbeResult::to_csv() const {
  std::string out = "k,median_deviation,fraction_within_0.5\n";
  char buf[96];
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.4f\n", ks[i], median[i], fraction_within(i, 0.5));
    out += buf;
  }
  return out;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

void softmax_rows(RowMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

std::vector<double> to_vec(const RowMat& m) { return {m.data(), m.data() + m.size()}; }

/// k x n with orthonormal rows from a Gaussian draw; retries on rank loss.
RowMat orthonormal_rows(std::size_t k, std::size_t n, Rng& rng) {
  for (int attempt = 0; attempt < 3; ++attempt) {
    Eigen::MatrixXd g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    const double sd = 1.0 / std::sqrt(static_cast<double>(k));
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = sd * rng.gaussian();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd rmat = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
    if (rmat.diagonal().cwiseAbs().minCoeff() < 1e-10) continue;
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
    return q.transpose();
  }
  throw NumericError("attention probe: singular projection after 3 draws");
}

}  // namespace

std::vector<double> full_attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                                   std::size_t n, std::size_t d) {
  const auto N = static_cast<Eigen::Index>(n), D = static_cast<Eigen::Index>(d);
  const ConstMap Q(q.data(), N, D), K(k.data(), N, D), V(v.data(), N, D);
  RowMat a = (Q * K.transpose()) / std::sqrt(static_cast<double>(d));
  softmax_rows(a);
  return to_vec(a * V);
}

std::vector<double> projected_attention(std::span<const double> q, std::span<const double> k,
                                        std::span<const double> v, std::span<const double> eq,
                                        std::span<const double> ek, std::span<const double> ev,
                                        std::span<const double> dmat, std::size_t n, std::size_t d,
                                        std::size_t rank) {
  const auto N = static_cast<Eigen::Index>(n), D = static_cast<Eigen::Index>(d), R = static_cast<Eigen::Index>(rank);
  if (eq.size() != rank * n || ek.size() != rank * n || ev.size() != rank * n || dmat.size() != n * rank) {
    throw ShapeError("projected_attention: projection shapes do not match (k, n)");
  }
  const ConstMap Q(q.data(), N, D), K(k.data(), N, D), V(v.data(), N, D);
  const ConstMap EQ(eq.data(), R, N), EK(ek.data(), R, N), EV(ev.data(), R, N), Dm(dmat.data(), N, R);
  RowMat logits = ((EQ * Q) * (EK * K).transpose()) / std::sqrt(static_cast<double>(d));
  softmax_rows(logits);
  return to_vec(Dm * (logits * (EV * V)));
}

ProbeResult attention_approx_probe(std::size_t n, std::size_t d, std::span<const std::size_t> ks, int trials,
                                   std::uint64_t seed) {
  if (ks.empty() || trials < 1) throw ContractError("attention probe: need ks and trials >= 1");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == 0 || ks[i] > n) throw ContractError("attention probe: k must lie in [1, n]");
    if (i > 0 && ks[i] <= ks[i - 1]) throw ContractError("attention probe: ks must be increasing");
  }
  ProbeResult res;
  res.n = n;
  res.d = d;
  res.ks.assign(ks.begin(), ks.end());
  res.deviations.assign(ks.size(), {});
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(trial)));
    std::vector<double> q(n * d), k(n * d), v(n * d);
    rng.fill_gaussian(q);
    rng.fill_gaussian(k);
    rng.fill_gaussian(v);
    const auto full = full_attention(q, k, v, n, d);
    double full_norm = 0.0;
    for (double x : full) full_norm += x * x;
    full_norm = std::sqrt(full_norm);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const RowMat eq = orthonormal_rows(ks[i], n, rng);
      const RowMat ekv = orthonormal_rows(ks[i], n, rng);
      const RowMat dm = eq.transpose();
      const auto proj = projected_attention(q, k, v, to_vec(eq), to_vec(ekv), to_vec(ekv), to_vec(dm), n, d, ks[i]);
      double pn = 0.0;
      for (double x : proj) pn += x * x;
      res.deviations[i].push_back(std::abs(std::sqrt(pn) / full_norm - 1.0));
    }
  }
  for (auto dev : res.deviations) {
    std::sort(dev.begin(), dev.end());
    const auto mid = dev.size() / 2;
    res.median.push_back(dev.size() % 2 ? dev[mid] : 0.5 * (dev[mid - 1] + dev[mid]));
  }
  return res;
}

std::size_t theorem_rank_bound(std::size_t n, double eps) {
  const double denom = eps * eps - eps * eps * eps;
  if (!(denom > 0.0)) throw ContractError("theorem_rank_bound: eps must lie in (0, 1)");
  return static_cast<std::size_t>(std::ceil(5.0 * std::log(static_cast<double>(n)) / denom));
}

}  // namespace cfdiff::bench
