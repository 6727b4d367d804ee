// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

namespace cfdiff::diffusion {

enum class ScheduleKind {
  linear,         // beta_t linear in t
  linear_scaled,  // 1 - alpha_bar_t linear in t
};

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Tables indexed by t = 1..T; index 0 holds the t = 0 convention
/// (beta_0 = 0, alpha_0 = alpha_bar_0 = 1).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);  // betas for t = 1..T

  int steps() const { return static_cast<int>(betas_.size()) - 1; }
  double beta(int t) const { return betas_.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }

 private:
  std::vector<double> betas_{0.0};
  std::vector<double> alpha_bars_{1.0};
};

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max,
                             ScheduleKind kind = ScheduleKind::linear);

/// u_t = sqrt(1 - beta_t) u_prev + sqrt(beta_t) noise
void diffuse_step(std::span<const float> u_prev, int t, const NoiseSchedule& s,
                  std::span<const float> noise, std::span<float> out);

/// u_t = sqrt(alpha_bar_t) u0 + sqrt(1 - alpha_bar_t) noise
void diffuse_to(std::span<const float> u0, int t, const NoiseSchedule& s,
                std::span<const float> noise, std::span<float> out);

struct PosteriorCoefficients {
  double c0;  // multiplies u0
  double ct;  // multiplies u_t
};

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s);

/// Mean of q(u_{t-1} | u_t, u0).
void posterior_mean(std::span<const float> u_t, std::span<const float> u0, int t,
                    const NoiseSchedule& s, std::span<float> out);

}  // namespace cfdiff::diffusion
