// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used by unit and acceptance tests.
// None of them share code paths with the library under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "cfdiff/graph.hpp"
#include "cfdiff/rng.hpp"

namespace cfdiff::oracle {

/// Random bipartite edge list, each pair present with probability p.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> random_edges(std::size_t users, std::size_t items,
                                                                         double p, Rng& rng) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t u = 0; u < users; ++u) {
    for (std::uint32_t i = 0; i < items; ++i) {
      if (rng.uniform01() < p) edges.emplace_back(u, i);
    }
  }
  return edges;
}

/// Hop encoding by walk enumeration over a plain adjacency list. Node ids:
/// users are 0..U-1, items U..U+I-1.
struct HopOracle {
  std::size_t users = 0;
  std::size_t items = 0;
  std::vector<std::vector<std::size_t>> adj;

  HopOracle(std::size_t u, std::size_t i, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges)
      : users(u), items(i), adj(u + i) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> uniq(edges.begin(), edges.end());
    for (auto [a, b] : uniq) {
      adj[a].push_back(u + b);
      adj[u + b].push_back(a);
    }
  }

  /// Dense vector of length max(U, I): value c_j / sum(c) at nodes whose
  /// shortest walk from `user` has length exactly h, where c_j counts the
  /// distinct last edges (x, j) of length-h walks with x first reached at
  /// length h - 1.
  std::vector<float> encode(std::uint32_t user, int h) const {
    // Shortest walk length to each node, by exhaustive walk enumeration.
    std::map<std::size_t, int> dist;
    std::vector<std::vector<std::size_t>> walks{{user}};
    dist[user] = 0;
    std::vector<std::vector<std::size_t>> all_walks_h;
    for (int len = 1; len <= h; ++len) {
      std::vector<std::vector<std::size_t>> next;
      for (const auto& w : walks) {
        for (auto nb : adj[w.back()]) {
          auto nw = w;
          nw.push_back(nb);
          if (!dist.count(nb)) dist[nb] = len;
          next.push_back(std::move(nw));
        }
      }
      // Deduplicate by (previous node, endpoint) to keep enumeration bounded;
      // multiplicity is recomputed from distinct last edges below.
      std::set<std::pair<std::size_t, std::size_t>> seen;
      std::vector<std::vector<std::size_t>> kept;
      for (auto& w : next) {
        if (seen.insert({w[w.size() - 2], w.back()}).second) kept.push_back(std::move(w));
      }
      walks = std::move(kept);
      if (len == h) all_walks_h = walks;
    }
    std::map<std::size_t, std::set<std::size_t>> last_edges;
    for (const auto& w : all_walks_h) {
      const auto j = w.back();
      const auto x = w[w.size() - 2];
      if (dist.at(j) == h && dist.at(x) == h - 1) last_edges[j].insert(x);
    }
    std::uint64_t total = 0;
    for (const auto& [j, xs] : last_edges) total += xs.size();
    std::vector<float> out(std::max(users, items), 0.0f);
    for (const auto& [j, xs] : last_edges) {
      const std::size_t idx = j < users ? j : j - users;
      out[idx] = static_cast<float>(static_cast<double>(xs.size()) / static_cast<double>(total));
    }
    return out;
  }
};

/// Density of q(u_{t-1} | u_t, u0) integrated on a grid; returns its mean.
/// q(u_{t-1} | u0) = N(sqrt(abar_prev) u0, 1 - abar_prev),
/// q(u_t | u_{t-1}) = N(sqrt(1 - beta) u_{t-1}, beta).
inline double posterior_mean_grid(double u_t, double u0, double beta, double abar_prev) {
  const double prior_mean = std::sqrt(abar_prev) * u0;
  const double prior_var = 1.0 - abar_prev;
  const double a = std::sqrt(1.0 - beta);
  if (prior_var <= 0.0) return prior_mean;
  // Centre the grid on the prior and the likelihood so both are resolved.
  const double centre_l = u_t / a;
  const double lo = std::min(prior_mean, centre_l) - 12.0 * std::sqrt(std::max(prior_var, beta / (a * a)));
  const double hi = std::max(prior_mean, centre_l) + 12.0 * std::sqrt(std::max(prior_var, beta / (a * a)));
  const int n = 400000;
  const double step = (hi - lo) / n;
  // Log-densities shifted by their maximum to avoid underflow.
  double best = -INFINITY;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + step * i;
    const double lp = -0.5 * (x - prior_mean) * (x - prior_mean) / prior_var - 0.5 * (u_t - a * x) * (u_t - a * x) / beta;
    best = std::max(best, lp);
  }
  double z = 0.0, m = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + step * i;
    const double lp = -0.5 * (x - prior_mean) * (x - prior_mean) / prior_var - 0.5 * (u_t - a * x) * (u_t - a * x) / beta;
    const double w = std::exp(lp - best) * ((i == 0 || i == n) ? 0.5 : 1.0);
    z += w;
    m += w * x;
  }
  return m / z;
}

}  // namespace cfdiff::oracle
