// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focalfuse/arch/params.hpp"

namespace focalfuse::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments aligned with a ParamStore (same order and shapes).
template <class T>
struct OptimState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  OptimState() = default;
  explicit OptimState(const arch::ParamStore<T>& params, AdamHyper h = {}) : hyper(h) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.push_back(Tensor<T>::zeros(params.tensor(i).shape()));
      v.push_back(Tensor<T>::zeros(params.tensor(i).shape()));
    }
  }
};

/// One bias-corrected Adam update of a single tensor at step t (1-based).
template <class T>
void adam_update(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v, std::int64_t t, double lr,
                 const AdamHyper& h) {
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T c1 = T{1} - static_cast<T>(std::pow(h.beta1, static_cast<double>(t)));
  const T c2 = T{1} - static_cast<T>(std::pow(h.beta2, static_cast<double>(t)));
  const T step = static_cast<T>(lr);
  const T eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * g[i];
    v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
    const T mhat = m[i] / c1;
    const T vhat = v[i] / c2;
    p[i] -= step * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Applies Adam to every parameter using its accumulated gradient (zero when
/// none reached it), multiplied by `grad_scale`. Increments state.step once.
template <class T>
void adam_step(arch::ParamStore<T>& params, OptimState<T>& state, double lr, double grad_scale = 1.0) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ConfigError("adam_step: optimizer state does not match the parameter store");
  }
  std::vector<std::vector<T>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& p = params.tensor(i);
    if (state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape()) {
      throw DimensionError("adam_step: moment shape mismatch for '" + params.names()[i] + "'");
    }
    grads[i] = p.grad();
    if (grad_scale != 1.0) {
      for (T& x : grads[i]) x *= static_cast<T>(grad_scale);
    }
    for (T x : grads[i]) {
      if (!std::isfinite(x)) throw NumericError("adam_step: non-finite gradient for parameter '" + params.names()[i] + "'");
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update<T>(params.tensor(i).mutable_data(), grads[i], state.m[i].mutable_data(), state.v[i].mutable_data(),
                   state.step, lr, state.hyper);
  }
}

/// Global L2 norm of all parameter gradients.
template <class T>
double grad_norm(const arch::ParamStore<T>& params) {
  double s = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (T x : params.tensor(i).grad()) s += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(s);
}

}  // namespace focalfuse::train
