// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "focalfuse/tensor/kernels.hpp"
#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse {

/// Kernel/stride/padding of a 3-D (transposed) convolution. Cross-correlation,
/// no kernel flip.
struct ConvSpec {
  std::array<Index, 3> kernel{3, 3, 3};
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> padding{1, 1, 1};
  std::array<Index, 3> output_padding{0, 0, 0};  // transposed only
  Index groups = 1;

  static ConvSpec cube(Index k, Index s = 1, Index p = 0, Index groups = 1, Index output_padding = 0) {
    return ConvSpec{{k, k, k}, {s, s, s}, {p, p, p}, {output_padding, output_padding, output_padding}, groups};
  }
  /// Kernel-3 "same" convolution.
  static ConvSpec same3(Index groups = 1) { return cube(3, 1, 1, groups); }
  /// Kernel-3 stride-2 layer that halves (conv) or exactly doubles (transposed) extents.
  static ConvSpec stride2(Index groups = 1) { return cube(3, 2, 1, groups, 1); }
};

inline Index conv_output_extent(Index in, Index k, Index s, Index p) { return (in + 2 * p - k) / s + 1; }
inline Index conv_transpose_output_extent(Index in, Index k, Index s, Index p, Index op) {
  return (in - 1) * s - 2 * p + k + op;
}

namespace detail {

template <class T>
void check_conv_operands(const char* op, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvSpec& spec, Index out_channels) {
  input.shape().require_rank(5, op);
  weight.shape().require_rank(5, op);
  if (spec.groups < 1) throw DimensionError(std::string(op) + ": groups must be positive");
  for (int i = 0; i < 3; ++i) {
    if (weight.dim(2 + i) != spec.kernel[i]) {
      throw DimensionError(std::string(op) + ": weight " + weight.shape().to_string() +
                           " disagrees with kernel extent " + std::to_string(spec.kernel[i]));
    }
    if (spec.stride[i] < 1 || spec.padding[i] < 0) {
      throw DimensionError(std::string(op) + ": stride must be >= 1 and padding >= 0");
    }
  }
  if (input.dim(1) % spec.groups != 0 || out_channels % spec.groups != 0) {
    throw DimensionError(std::string(op) + ": groups " + std::to_string(spec.groups) +
                         " must divide input channels " + std::to_string(input.dim(1)) +
                         " and output channels " + std::to_string(out_channels));
  }
  if (bias.defined() && (bias.shape().rank() != 1 || bias.dim(0) != out_channels)) {
    throw DimensionError(std::string(op) + ": bias " + bias.shape().to_string() + " must have " +
                         std::to_string(out_channels) + " entries");
  }
  check_finite(input.data(), op);
  check_finite(weight.data(), op);
}

template <class T>
void add_channel_bias(std::span<T> y, std::span<const T> bias, Index batch, Index channels, Index per_channel) {
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < channels; ++c) {
      T* row = y.data() + (b * channels + c) * per_channel;
      const T v = bias[static_cast<std::size_t>(c)];
      for (Index i = 0; i < per_channel; ++i) row[i] += v;
    }
}

template <class T>
void accumulate_bias_grad(std::span<T> db, std::span<const T> dy, Index batch, Index channels, Index per_channel) {
  for (Index c = 0; c < channels; ++c) {
    T s{0};
    for (Index b = 0; b < batch; ++b) {
      const T* row = dy.data() + (b * channels + c) * per_channel;
      for (Index i = 0; i < per_channel; ++i) s += row[i];
    }
    db[static_cast<std::size_t>(c)] += s;
  }
}

}  // namespace detail

/// 3-D cross-correlation.
/// input [B, Cin, W, H, Z], weight [Cout, Cin/groups, kw, kh, kz], bias [Cout] or undefined.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec) {
  constexpr const char* op = "conv3d";
  const Index cout = weight.dim(0);
  detail::check_conv_operands(op, input, weight, bias, spec, cout);
  if (weight.dim(1) * spec.groups != input.dim(1)) {
    throw DimensionError(std::string(op) + ": weight " + weight.shape().to_string() + " expects " +
                         std::to_string(weight.dim(1) * spec.groups) + " input channels, input has " +
                         std::to_string(input.dim(1)));
  }
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.out_channels = cout;
  g.groups = spec.groups;
  g.in = input.shape().spatial();
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.pad = spec.padding;
  for (int i = 0; i < 3; ++i) {
    if (g.in[i] + 2 * g.pad[i] < g.kernel[i]) {
      throw DimensionError(std::string(op) + ": spatial extent " + std::to_string(g.in[i]) +
                           " plus padding is smaller than kernel " + std::to_string(g.kernel[i]));
    }
    g.out[i] = conv_output_extent(g.in[i], g.kernel[i], g.stride[i], g.pad[i]);
  }

  Tensor<T> out(make_shape5(g.batch, cout, g.out));
  auto y = out.mutable_data();
  kernels::conv_forward(g, input.data().data(), weight.data().data(), y.data());
  if (bias.defined()) detail::add_channel_bias<T>(y, bias.data(), g.batch, cout, g.out_numel());
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input, &weight, &bias})) {
    tape->record(op, out.node_ptr(),
                 [g, x = input.node_ptr(), w = weight.node_ptr(), b = bias.node_ptr()](std::span<const T> dy) {
                   if (auto dx = detail::grad_target(x); !dx.empty())
                     kernels::conv_backward_data(g, dy.data(), w->value.data(), dx.data());
                   if (auto dw = detail::grad_target(w); !dw.empty())
                     kernels::conv_backward_weight(g, x->value.data(), dy.data(), dw.data());
                   if (auto db = detail::grad_target(b); !db.empty())
                     detail::accumulate_bias_grad<T>(db, dy, g.batch, g.out_channels, g.out_numel());
                 });
  }
  return out;
}

/// 3-D transposed convolution, the exact adjoint of conv3d with the same weight.
/// input [B, Cin, D...], weight [Cin, Cout/groups, k...], bias [Cout] or undefined.
/// Output extent per axis: (D - 1) * s - 2p + k + output_padding.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec) {
  constexpr const char* op = "conv_transpose3d";
  const Index cout = weight.dim(1) * spec.groups;
  detail::check_conv_operands(op, input, weight, bias, spec, cout);
  if (weight.dim(0) != input.dim(1)) {
    throw DimensionError(std::string(op) + ": weight " + weight.shape().to_string() + " expects " +
                         std::to_string(weight.dim(0)) + " input channels, input has " +
                         std::to_string(input.dim(1)));
  }
  // Geometry of the forward convolution whose adjoint this is: it maps the
  // transposed output (cout channels) back onto the transposed input.
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = cout;
  g.out_channels = input.dim(1);
  g.groups = spec.groups;
  g.out = input.shape().spatial();
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.pad = spec.padding;
  for (int i = 0; i < 3; ++i) {
    if (spec.output_padding[i] < 0 || spec.output_padding[i] >= spec.stride[i]) {
      throw DimensionError(std::string(op) + ": output_padding must lie in [0, stride)");
    }
    g.in[i] = conv_transpose_output_extent(g.out[i], g.kernel[i], g.stride[i], g.pad[i], spec.output_padding[i]);
    if (g.in[i] < 1) throw DimensionError(std::string(op) + ": non-positive output extent");
  }

  Tensor<T> out(make_shape5(g.batch, cout, g.in));
  auto y = out.mutable_data();
  kernels::conv_backward_data(g, input.data().data(), weight.data().data(), y.data());
  if (bias.defined()) detail::add_channel_bias<T>(y, bias.data(), g.batch, cout, g.in_numel());
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input, &weight, &bias})) {
    tape->record(op, out.node_ptr(),
                 [g, x = input.node_ptr(), w = weight.node_ptr(), b = bias.node_ptr()](std::span<const T> dy) {
                   if (auto dx = detail::grad_target(x); !dx.empty()) {
                     std::vector<T> tmp(dx.size());
                     kernels::conv_forward(g, dy.data(), w->value.data(), tmp.data());
                     for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
                   }
                   if (auto dw = detail::grad_target(w); !dw.empty())
                     kernels::conv_backward_weight(g, dy.data(), x->value.data(), dw.data());
                   if (auto db = detail::grad_target(b); !db.empty())
                     detail::accumulate_bias_grad<T>(db, dy, g.batch, g.in_channels, g.in_numel());
                 });
  }
  return out;
}

}  // namespace focalfuse
