// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfdiff/tensor.hpp"

namespace cfdiff::nd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter plus the shared step counter.
template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Shape> shapes);
};

/// Bias-corrected Adam update, in place:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads,
               AdamState<T>& state);

}  // namespace cfdiff::nd
