// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/schedule.hpp"

#include <cmath>

#include "cfdiff/errors.hpp"

namespace cfdiff::diffusion {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "linear-scaled" || name == "linear_scaled") return ScheduleKind::linear_scaled;
  throw ContractError("unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "linear-scaled";
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw ContractError("schedule: need at least one step");
  betas_.reserve(betas.size() + 1);
  alpha_bars_.reserve(betas.size() + 1);
  double bar = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ContractError("schedule: beta outside (0, 1)");
    bar *= 1.0 - b;
    betas_.push_back(b);
    alpha_bars_.push_back(bar);
  }
}

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max, ScheduleKind kind) {
  if (steps < 1) throw ContractError("schedule: steps must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ContractError("schedule: need 0 < beta_min <= beta_max < 1");
  }
  const auto n = static_cast<std::size_t>(steps);
  auto lerp = [&](std::size_t i) {
    if (n == 1) return beta_min;
    return beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::vector<double> betas(n);
  if (kind == ScheduleKind::linear) {
    for (std::size_t i = 0; i < n; ++i) betas[i] = lerp(i);
  } else {
    double prev_bar = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double bar = 1.0 - lerp(i);
      betas[i] = 1.0 - bar / prev_bar;
      prev_bar = bar;
    }
  }
  return NoiseSchedule(std::move(betas));
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.steps()) {
    throw ContractError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
  }
}

void check_len(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

}  // namespace

void diffuse_step(std::span<const float> u_prev, int t, const NoiseSchedule& s,
                  std::span<const float> noise, std::span<float> out) {
  check_t(t, s);
  check_len(u_prev.size(), noise.size(), "diffuse_step");
  check_len(u_prev.size(), out.size(), "diffuse_step");
  const double a = std::sqrt(1.0 - s.beta(t));
  const double b = std::sqrt(s.beta(t));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(a * u_prev[i] + b * noise[i]);
  }
}

void diffuse_to(std::span<const float> u0, int t, const NoiseSchedule& s,
                std::span<const float> noise, std::span<float> out) {
  check_t(t, s);
  check_len(u0.size(), noise.size(), "diffuse_to");
  check_len(u0.size(), out.size(), "diffuse_to");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(a * u0[i] + b * noise[i]);
  }
}

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s) {
  check_t(t, s);
  const double denom = 1.0 - s.alpha_bar(t);
  if (denom < 1e-12) throw NumericError("posterior_mean: 1 - alpha_bar_t below 1e-12");
  const double bar_prev = s.alpha_bar(t - 1);
  return {std::sqrt(bar_prev) * s.beta(t) / denom,
          std::sqrt(s.alpha(t)) * (1.0 - bar_prev) / denom};
}

void posterior_mean(std::span<const float> u_t, std::span<const float> u0, int t,
                    const NoiseSchedule& s, std::span<float> out) {
  check_len(u_t.size(), u0.size(), "posterior_mean");
  check_len(u_t.size(), out.size(), "posterior_mean");
  const auto c = posterior_coefficients(t, s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(c.c0 * u0[i] + c.ct * u_t[i]);
  }
}

}  // namespace cfdiff::diffusion
