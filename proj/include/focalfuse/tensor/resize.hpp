// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse {

namespace detail {

/// Source taps of one output coordinate under the half-pixel (align_corners = false)
/// convention: value = src[lo] + frac * (src[hi] - src[lo]).
template <class T>
struct LerpTap {
  Index lo;
  Index hi;
  T frac;
};

template <class T>
std::vector<LerpTap<T>> lerp_taps(Index in, Index out) {
  std::vector<LerpTap<T>> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    Index lo = std::min<Index>(static_cast<Index>(src), in - 1);
    Index hi = std::min<Index>(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, static_cast<T>(src - static_cast<double>(lo))};
  }
  return taps;
}

}  // namespace detail

/// Trilinear resampling of the spatial axes. Interpolation is written in
/// lerp form so constant fields are reproduced exactly.
template <class T>
Tensor<T> resize_trilinear(const Tensor<T>& input, const std::array<Index, 3>& target) {
  constexpr const char* op = "resize_trilinear";
  input.shape().require_rank(5, op);
  for (Index e : target) {
    if (e < 1) throw DimensionError(std::string(op) + ": target extents must be >= 1");
  }
  const auto in = input.shape().spatial();
  if (in == target) {
    Tensor<T> copy = input.clone();
    if (auto* tape = detail::recording_tape<T>({&input})) {
      tape->record(op, copy.node_ptr(), [x = input.node_ptr()](std::span<const T> dy) {
        auto dx = detail::grad_target(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
      });
    }
    return copy;
  }
  const auto tw = detail::lerp_taps<T>(in[0], target[0]);
  const auto th = detail::lerp_taps<T>(in[1], target[1]);
  const auto tz = detail::lerp_taps<T>(in[2], target[2]);
  const Index planes = input.dim(0) * input.dim(1);
  const Index n_in = in[0] * in[1] * in[2];
  const Index n_out = target[0] * target[1] * target[2];

  Tensor<T> result(make_shape5(input.dim(0), input.dim(1), target));
  auto y = result.mutable_data();
  auto x = input.data();
  auto at = [&](const T* xp, Index w, Index h, Index z) { return xp[(w * in[1] + h) * in[2] + z]; };
  for (Index p = 0; p < planes; ++p) {
    const T* xp = x.data() + p * n_in;
    T* yp = y.data() + p * n_out;
    for (Index w = 0; w < target[0]; ++w)
      for (Index h = 0; h < target[1]; ++h)
        for (Index z = 0; z < target[2]; ++z) {
          const auto& a = tw[static_cast<std::size_t>(w)];
          const auto& b = th[static_cast<std::size_t>(h)];
          const auto& c = tz[static_cast<std::size_t>(z)];
          auto along_z = [&](Index wi, Index hi) {
            const T lo = at(xp, wi, hi, c.lo);
            return lo + c.frac * (at(xp, wi, hi, c.hi) - lo);
          };
          auto along_h = [&](Index wi) {
            const T lo = along_z(wi, b.lo);
            return lo + b.frac * (along_z(wi, b.hi) - lo);
          };
          const T lo = along_h(a.lo);
          yp[(w * target[1] + h) * target[2] + z] = lo + a.frac * (along_h(a.hi) - lo);
        }
  }
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record(op, result.node_ptr(),
                 [x = input.node_ptr(), tw, th, tz, in, target, planes, n_in, n_out](std::span<const T> dy) {
                   auto dx = detail::grad_target(x);
                   if (dx.empty()) return;
                   for (Index p = 0; p < planes; ++p) {
                     T* dxp = dx.data() + p * n_in;
                     const T* dyp = dy.data() + p * n_out;
                     for (Index w = 0; w < target[0]; ++w)
                       for (Index h = 0; h < target[1]; ++h)
                         for (Index z = 0; z < target[2]; ++z) {
                           const T g = dyp[(w * target[1] + h) * target[2] + z];
                           const auto& a = tw[static_cast<std::size_t>(w)];
                           const auto& b = th[static_cast<std::size_t>(h)];
                           const auto& c = tz[static_cast<std::size_t>(z)];
                           const T wa[2] = {T{1} - a.frac, a.frac};
                           const T wb[2] = {T{1} - b.frac, b.frac};
                           const T wc[2] = {T{1} - c.frac, c.frac};
                           const Index ia[2] = {a.lo, a.hi};
                           const Index ib[2] = {b.lo, b.hi};
                           const Index ic[2] = {c.lo, c.hi};
                           for (int i = 0; i < 2; ++i)
                             for (int j = 0; j < 2; ++j)
                               for (int k = 0; k < 2; ++k)
                                 dxp[(ia[i] * in[1] + ib[j]) * in[2] + ic[k]] += g * wa[i] * wb[j] * wc[k];
                         }
                   }
                 });
  }
  return result;
}

}  // namespace focalfuse
