// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfdiff/tensor.hpp"

namespace cfdiff::nd {

struct GradCheckOptions {
  double eps = 1e-3;
  /// Tensors larger than this are checked on a seeded random subsample.
  std::size_t max_entries = 10000;
  std::uint64_t seed = 0;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Central stencil width: 2 (error O(eps^2)) or 4 (error O(eps^4)).
  int stencil = 2;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_row = 0;
  std::size_t worst_col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;  // index into per_param
  std::vector<GradCheckEntry> per_param;

  const GradCheckEntry& worst() const { return per_param.at(worst_param); }
};

/// Central differences of `loss` against the supplied analytic gradients.
/// `loss` must read the current contents of `params` and be deterministic.
GradCheckReport gradient_check(const std::function<double()>& loss,
                               std::span<Tensor<double>* const> params,
                               std::span<const Tensor<double>> analytic,
                               std::span<const std::string> names,
                               const GradCheckOptions& opts = {});

}  // namespace cfdiff::nd
