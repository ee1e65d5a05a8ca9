// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse {

inline constexpr double kInstanceNormEps = 1e-5;

/// Per-(batch, channel) standardization over the spatial axes (biased
/// variance), followed by the per-channel affine map gamma * x_hat + beta.
/// gamma/beta are [C] or undefined (identity affine).
template <class T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = static_cast<T>(kInstanceNormEps)) {
  constexpr const char* op = "instance_norm";
  input.shape().require_rank(5, op);
  const Index batch = input.dim(0);
  const Index channels = input.dim(1);
  const Index n = input.shape().spatial_numel();
  if (n < 2) {
    throw NumericError(std::string(op) + ": needs at least 2 voxels per channel, got " + input.shape().to_string());
  }
  for (const Tensor<T>* p : {&gamma, &beta}) {
    if (p->defined() && (p->shape().rank() != 1 || p->dim(0) != channels)) {
      throw DimensionError(std::string(op) + ": affine parameter " + p->shape().to_string() + " must have " +
                           std::to_string(channels) + " entries");
    }
  }
  detail::check_finite(input.data(), op);

  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  // Normalized values and inverse std-devs are kept for the backward pass.
  std::vector<T> x_hat(x.size());
  std::vector<T> inv_std(static_cast<std::size_t>(batch * channels));
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < channels; ++c) {
      const std::size_t base = static_cast<std::size_t>((b * channels + c) * n);
      T mean{0};
      for (Index i = 0; i < n; ++i) mean += x[base + i];
      mean /= static_cast<T>(n);
      T var{0};
      for (Index i = 0; i < n; ++i) {
        const T d = x[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T is = T{1} / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(b * channels + c)] = is;
      const T g = gamma.defined() ? gamma.data()[static_cast<std::size_t>(c)] : T{1};
      const T s = beta.defined() ? beta.data()[static_cast<std::size_t>(c)] : T{0};
      for (Index i = 0; i < n; ++i) {
        const T h = (x[base + i] - mean) * is;
        x_hat[base + i] = h;
        y[base + i] = h * g + s;
      }
    }
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input, &gamma, &beta})) {
    tape->record(op, out.node_ptr(),
                 [x_hat = std::move(x_hat), inv_std = std::move(inv_std), xn = input.node_ptr(), gn = gamma.node_ptr(),
                  bn = beta.node_ptr(), batch, channels, n](std::span<const T> dy) {
                   auto dx = detail::grad_target(xn);
                   auto dg = detail::grad_target(gn);
                   auto db = detail::grad_target(bn);
                   for (Index c = 0; c < channels; ++c) {
                     const T g = gn ? gn->value[static_cast<std::size_t>(c)] : T{1};
                     T sum_g{0}, sum_gh{0};
                     for (Index b = 0; b < batch; ++b) {
                       const std::size_t base = static_cast<std::size_t>((b * channels + c) * n);
                       T mean_d{0}, mean_dh{0};
                       for (Index i = 0; i < n; ++i) {
                         sum_g += dy[base + i];
                         sum_gh += dy[base + i] * x_hat[base + i];
                         mean_d += dy[base + i];
                         mean_dh += dy[base + i] * x_hat[base + i];
                       }
                       if (dx.empty()) continue;
                       mean_d /= static_cast<T>(n);
                       mean_dh /= static_cast<T>(n);
                       const T k = g * inv_std[static_cast<std::size_t>(b * channels + c)];
                       for (Index i = 0; i < n; ++i)
                         dx[base + i] += k * (dy[base + i] - mean_d - x_hat[base + i] * mean_dh);
                     }
                     if (!dg.empty()) dg[static_cast<std::size_t>(c)] += sum_gh;
                     if (!db.empty()) db[static_cast<std::size_t>(c)] += sum_g;
                   }
                 });
  }
  return out;
}

}  // namespace focalfuse
