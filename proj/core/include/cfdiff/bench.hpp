// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfdiff/dataset.hpp"

namespace cfdiff::bench {

/// Every (u, i) present independently with probability 1 - sparsity; all
/// interactions tagged train. Users left empty are redrawn once, then
/// dropped (ids stay contiguous).
data::InteractionMatrix synth_interactions(std::size_t num_users, std::size_t num_items, double sparsity,
                                           std::uint64_t seed);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Degree-2 least squares y = c0 + c1 x + c2 x^2 with a t-test on c2.
struct QuadraticFit {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double c2_stderr = 0.0;
  double t_stat = 0.0;
  double t_critical = 0.0;  // two-sided 95%
  bool c2_significant = false;
};

LinearFit fit_line(std::span<const double> x, std::span<const double> y);
QuadraticFit fit_quadratic(std::span<const double> x, std::span<const double> y);
/// Two-sided 95% Student-t critical value for `dof` degrees of freedom.
double t_critical_95(std::size_t dof);

enum class Dimension { users, items };

struct ScalingConfig {
  std::size_t k = 64;
  std::size_t d = 8;
  std::size_t layers = 1;
  int hops = 3;
  std::size_t batch = 64;
  int warmup = 3;
  int iterations = 20;
  double sparsity = 0.99;
  std::uint64_t seed = 7;
  int steps = 100;  // diffusion T
};

struct ScalingRun {
  Dimension dimension = Dimension::users;
  std::vector<std::size_t> users;  // actual |U| per size after dropping empty users
  std::vector<std::size_t> items;
  std::vector<std::size_t> sizes;  // requested values of the varied dimension
  std::vector<double> seconds_per_iter;  // median
  bool partial = false;  // a size failed (e.g. out of memory); later sizes skipped
  std::string failure;
  LinearFit fit;
  QuadraticFit quadratic;

  std::string to_csv() const;
};

/// One iteration is one training step (batch assembly, forward, backward,
/// Adam) on a random batch of users.
ScalingRun time_scaling(Dimension dimension, std::span<const std::size_t> sizes, std::size_t fixed_other,
                        const ScalingConfig& config);

struct ProbeResult {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::size_t> ks;
  std::vector<double> median;                   // per k
  std::vector<std::vector<double>> deviations;  // per k, per trial

  /// Fraction of trials at ks[i] with deviation <= bound.
  double fraction_within(std::size_t i, double bound) const;
  std::string to_csv() const;
};

/// softmax(Q K^T / sqrt(d)) V for n x d inputs (double precision).
std::vector<double> full_attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                                   std::size_t n, std::size_t d);

/// D softmax(E_Q Q K^T E_K^T / sqrt(d)) E_V V with E_* k x n and D n x k.
std::vector<double> projected_attention(std::span<const double> q, std::span<const double> k,
                                        std::span<const double> v, std::span<const double> eq,
                                        std::span<const double> ek, std::span<const double> ev,
                                        std::span<const double> dmat, std::size_t n, std::size_t d,
                                        std::size_t rank);

/// Per trial: Gaussian Q, K, V; E_Q and a shared E_K = E_V drawn with
/// N(0, 1/k) entries and row-orthonormalized; D = E_Q^T. Records
/// | ||projected||_F / ||full||_F - 1 |.
ProbeResult attention_approx_probe(std::size_t n, std::size_t d, std::span<const std::size_t> ks, int trials,
                                   std::uint64_t seed);

/// Smallest k with k >= 5 ln(n) / (eps^2 - eps^3).
std::size_t theorem_rank_bound(std::size_t n, double eps);

}  // namespace cfdiff::bench
