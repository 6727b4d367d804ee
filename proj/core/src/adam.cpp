// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/adam.hpp"

#include <cmath>

#include "cfdiff/errors.hpp"

namespace cfdiff::nd {

template <class T>
AdamState<T>::AdamState(AdamConfig cfg, std::span<const Shape> shapes) : config(cfg) {
  m.reserve(shapes.size());
  v.reserve(shapes.size());
  for (const auto& s : shapes) {
    m.emplace_back(s.rows, s.cols);
    v.emplace_back(s.rows, s.cols);
  }
}

template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.m[i].shape() ||
        params[i]->shape() != state.v[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>* const>,
                        AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>* const>,
                        AdamState<double>&);

}  // namespace cfdiff::nd
