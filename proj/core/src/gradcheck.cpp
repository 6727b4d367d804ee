// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfdiff/errors.hpp"
#include "cfdiff/rng.hpp"

namespace cfdiff::nd {

GradCheckReport gradient_check(const std::function<double()>& loss,
                               std::span<Tensor<double>* const> params,
                               std::span<const Tensor<double>> analytic,
                               std::span<const std::string> names, const GradCheckOptions& opts) {
  if (params.size() != analytic.size() || params.size() != names.size()) {
    throw ContractError("gradient_check: params, gradients and names must align");
  }
  if (opts.stencil != 2 && opts.stencil != 4) throw ContractError("gradient_check: stencil must be 2 or 4");
  GradCheckReport report;
  Rng rng(opts.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    const auto& g = analytic[pi];
    if (p.shape() != g.shape()) throw ShapeError("gradient_check: gradient shape mismatch for " + names[pi]);

    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opts.max_entries) {
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(opts.max_entries);
      std::sort(idx.begin(), idx.end());
    }

    GradCheckEntry entry;
    entry.name = names[pi];
    entry.checked = idx.size();
    for (auto j : idx) {
      auto& x = p.data()[j];
      const double orig = x;
      auto at = [&](double offset) {
        x = orig + offset;
        const double v = loss();
        x = orig;
        return v;
      };
      const double h = opts.eps;
      double numeric = (at(h) - at(-h)) / (2.0 * h);
      if (opts.stencil == 4) {
        numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      }
      const double a = g.data()[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_error || j == idx.front()) {
        entry.max_rel_error = rel;
        entry.worst_row = p.cols() ? j / p.cols() : 0;
        entry.worst_col = p.cols() ? j % p.cols() : 0;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    if (report.per_param.empty() || entry.max_rel_error > report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_param = report.per_param.size();
    }
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cfdiff::nd
