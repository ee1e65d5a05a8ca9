// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse {

enum class PoolKind { max, avg };

/// Kernel-2 stride-2 pooling; every spatial extent must be even.
/// Max pooling breaks ties toward the first voxel in raster order.
template <class T>
Tensor<T> pool3d(const Tensor<T>& input, PoolKind kind) {
  constexpr const char* op = "pool3d";
  input.shape().require_rank(5, op);
  const auto in = input.shape().spatial();
  for (Index e : in) {
    if (e % 2 != 0) {
      throw DimensionError(std::string(op) + ": spatial extents must be even, got " + input.shape().to_string());
    }
  }
  const std::array<Index, 3> out{in[0] / 2, in[1] / 2, in[2] / 2};
  const Index planes = input.dim(0) * input.dim(1);
  const Index n_in = in[0] * in[1] * in[2];
  const Index n_out = out[0] * out[1] * out[2];

  Tensor<T> result(make_shape5(input.dim(0), input.dim(1), out));
  auto y = result.mutable_data();
  auto x = input.data();
  // Flat input offset of the selected voxel per output (max only).
  std::vector<Index> argmax(kind == PoolKind::max ? static_cast<std::size_t>(planes * n_out) : 0);

  for (Index p = 0; p < planes; ++p) {
    const T* xp = x.data() + p * n_in;
    for (Index w = 0; w < out[0]; ++w)
      for (Index h = 0; h < out[1]; ++h)
        for (Index z = 0; z < out[2]; ++z) {
          const Index o = p * n_out + (w * out[1] + h) * out[2] + z;
          T acc = kind == PoolKind::max ? xp[((2 * w) * in[1] + 2 * h) * in[2] + 2 * z] : T{0};
          Index best = ((2 * w) * in[1] + 2 * h) * in[2] + 2 * z;
          for (Index dw = 0; dw < 2; ++dw)
            for (Index dh = 0; dh < 2; ++dh)
              for (Index dz = 0; dz < 2; ++dz) {
                const Index off = ((2 * w + dw) * in[1] + 2 * h + dh) * in[2] + 2 * z + dz;
                if (kind == PoolKind::max) {
                  if (xp[off] > acc) {
                    acc = xp[off];
                    best = off;
                  }
                } else {
                  acc += xp[off];
                }
              }
          if (kind == PoolKind::max) {
            y[static_cast<std::size_t>(o)] = acc;
            argmax[static_cast<std::size_t>(o)] = p * n_in + best;
          } else {
            y[static_cast<std::size_t>(o)] = acc / T{8};
          }
        }
  }
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record(op, result.node_ptr(),
                 [kind, argmax = std::move(argmax), x = input.node_ptr(), in, out, planes, n_in,
                  n_out](std::span<const T> dy) {
                   auto dx = detail::grad_target(x);
                   if (dx.empty()) return;
                   if (kind == PoolKind::max) {
                     for (std::size_t o = 0; o < dy.size(); ++o) dx[static_cast<std::size_t>(argmax[o])] += dy[o];
                     return;
                   }
                   for (Index p = 0; p < planes; ++p)
                     for (Index w = 0; w < out[0]; ++w)
                       for (Index h = 0; h < out[1]; ++h)
                         for (Index z = 0; z < out[2]; ++z) {
                           const T g = dy[static_cast<std::size_t>(p * n_out + (w * out[1] + h) * out[2] + z)] / T{8};
                           for (Index dw = 0; dw < 2; ++dw)
                             for (Index dh = 0; dh < 2; ++dh)
                               for (Index dz = 0; dz < 2; ++dz)
                                 dx[static_cast<std::size_t>(p * n_in + ((2 * w + dw) * in[1] + 2 * h + dh) * in[2] +
                                                             2 * z + dz)] += g;
                         }
                 });
  }
  return result;
}

/// Per-(batch, channel) arithmetic mean over all voxels: [B, C, W, H, Z] -> [B, C, 1, 1, 1].
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  constexpr const char* op = "global_avg_pool";
  input.shape().require_rank(5, op);
  const Index planes = input.dim(0) * input.dim(1);
  const Index n = input.shape().spatial_numel();
  Tensor<T> result(Shape{input.dim(0), input.dim(1), 1, 1, 1});
  auto y = result.mutable_data();
  auto x = input.data();
  for (Index p = 0; p < planes; ++p) {
    T s{0};
    for (Index i = 0; i < n; ++i) s += x[static_cast<std::size_t>(p * n + i)];
    y[static_cast<std::size_t>(p)] = s / static_cast<T>(n);
  }
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record(op, result.node_ptr(), [x = input.node_ptr(), planes, n](std::span<const T> dy) {
      auto dx = detail::grad_target(x);
      if (dx.empty()) return;
      for (Index p = 0; p < planes; ++p) {
        const T g = dy[static_cast<std::size_t>(p)] / static_cast<T>(n);
        for (Index i = 0; i < n; ++i) dx[static_cast<std::size_t>(p * n + i)] += g;
      }
    });
  }
  return result;
}

}  // namespace focalfuse
