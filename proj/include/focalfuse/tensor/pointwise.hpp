// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "focalfuse/tensor/kernels.hpp"
#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse {

// ---------------------------------------------------------------------------
// Per-voxel channel maps

/// Affine map across the channel axis only: y[b, :, v] = W x[b, :, v] + bias.
/// weight [Cout, C], bias [Cout] or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  constexpr const char* op = "linear";
  input.shape().require_rank(5, op);
  weight.shape().require_rank(2, op);
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError(std::string(op) + ": weight " + weight.shape().to_string() + " expects " +
                         std::to_string(weight.dim(1)) + " channels, input has " + std::to_string(input.dim(1)));
  }
  const Index cout = weight.dim(0);
  if (bias.defined() && (bias.shape().rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError(std::string(op) + ": bias " + bias.shape().to_string() + " must have " +
                         std::to_string(cout) + " entries");
  }
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.out_channels = cout;
  g.in = g.out = input.shape().spatial();

  Tensor<T> out(make_shape5(g.batch, cout, g.out));
  auto y = out.mutable_data();
  kernels::conv_forward(g, input.data().data(), weight.data().data(), y.data());
  const Index n = g.out_numel();
  if (bias.defined()) {
    auto bv = bias.data();
    for (Index b = 0; b < g.batch; ++b)
      for (Index c = 0; c < cout; ++c) {
        T* row = y.data() + (b * cout + c) * n;
        for (Index i = 0; i < n; ++i) row[i] += bv[static_cast<std::size_t>(c)];
      }
  }
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input, &weight, &bias})) {
    tape->record(op, out.node_ptr(),
                 [g, x = input.node_ptr(), w = weight.node_ptr(), b = bias.node_ptr()](std::span<const T> dy) {
                   if (auto dx = detail::grad_target(x); !dx.empty())
                     kernels::conv_backward_data(g, dy.data(), w->value.data(), dx.data());
                   if (auto dw = detail::grad_target(w); !dw.empty())
                     kernels::conv_backward_weight(g, x->value.data(), dy.data(), dw.data());
                   if (auto db = detail::grad_target(b); !db.empty()) {
                     const Index n = g.out_numel();
                     for (Index c = 0; c < g.out_channels; ++c) {
                       T s{0};
                       for (Index bb = 0; bb < g.batch; ++bb)
                         for (Index i = 0; i < n; ++i) s += dy[static_cast<std::size_t>((bb * g.out_channels + c) * n + i)];
                       db[static_cast<std::size_t>(c)] += s;
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { gelu, relu, softmax_channel };

namespace detail {

template <class T>
T gaussian_cdf(T x) {
  return T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gaussian_pdf(T x) {
  return std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * std::numbers::pi_v<T>);
}

}  // namespace detail

/// gelu is the exact x * Phi(x); softmax_channel normalizes across axis 1
/// with max subtraction.
template <class T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  constexpr const char* op = "activation";
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  Index planes = 0, channels = 0, n = 0;
  switch (kind) {
    case Activation::gelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * detail::gaussian_cdf(x[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
      break;
    case Activation::softmax_channel: {
      input.shape().require_rank(5, "softmax_channel");
      planes = input.dim(0);
      channels = input.dim(1);
      n = input.shape().spatial_numel();
      for (Index b = 0; b < planes; ++b)
        for (Index i = 0; i < n; ++i) {
          auto at = [&](Index c) { return static_cast<std::size_t>((b * channels + c) * n + i); };
          T m = x[at(0)];
          for (Index c = 1; c < channels; ++c) m = std::max(m, x[at(c)]);
          T s{0};
          for (Index c = 0; c < channels; ++c) {
            y[at(c)] = std::exp(x[at(c)] - m);
            s += y[at(c)];
          }
          for (Index c = 0; c < channels; ++c) y[at(c)] /= s;
        }
      break;
    }
  }
  detail::check_finite<T>(y, op);

  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record(op, out.node_ptr(),
                 [kind, x = input.node_ptr(), yn = std::weak_ptr(out.node_ptr()), planes, channels,
                  n](std::span<const T> dy) {
                   auto dx = detail::grad_target(x);
                   if (dx.empty()) return;
                   const auto& xv = x->value;
                   switch (kind) {
                     case Activation::gelu:
                       for (std::size_t i = 0; i < dx.size(); ++i)
                         dx[i] += dy[i] * (detail::gaussian_cdf(xv[i]) + xv[i] * detail::gaussian_pdf(xv[i]));
                       break;
                     case Activation::relu:
                       for (std::size_t i = 0; i < dx.size(); ++i)
                         if (xv[i] > T{0}) dx[i] += dy[i];
                       break;
                     case Activation::softmax_channel: {
                       const auto& yv = yn.lock()->value;
                       for (Index b = 0; b < planes; ++b)
                         for (Index i = 0; i < n; ++i) {
                           auto at = [&](Index c) { return static_cast<std::size_t>((b * channels + c) * n + i); };
                           T dot{0};
                           for (Index c = 0; c < channels; ++c) dot += yv[at(c)] * dy[at(c)];
                           for (Index c = 0; c < channels; ++c) dx[at(c)] += yv[at(c)] * (dy[at(c)] - dot);
                         }
                       break;
                     }
                   }
                 });
  }
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  return activation(x, Activation::gelu);
}
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}
template <class T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
  return activation(x, Activation::softmax_channel);
}

// ---------------------------------------------------------------------------
// Channel concatenation / slicing

/// Concatenates along axis 1, preserving order.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  constexpr const char* op = "concat_channels";
  if (inputs.empty()) throw DimensionError(std::string(op) + ": needs at least one input");
  const Shape& ref = inputs.front().shape();
  ref.require_rank(5, op);
  Index channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    s.require_rank(5, op);
    if (s[0] != ref[0] || s.spatial() != ref.spatial()) {
      throw DimensionError(std::string(op) + ": extents " + s.to_string() + " do not match " + ref.to_string());
    }
    channels += s[1];
  }
  const Index batch = ref[0];
  const Index n = ref.spatial_numel();
  Tensor<T> out(make_shape5(batch, channels, ref.spatial()));
  auto y = out.mutable_data();
  std::vector<Index> offsets;
  Index c0 = 0;
  for (const auto& t : inputs) {
    offsets.push_back(c0);
    const Index c = t.dim(1);
    auto x = t.data();
    for (Index b = 0; b < batch; ++b)
      std::copy_n(x.begin() + b * c * n, c * n, y.begin() + (b * channels + c0) * n);
    c0 += c;
  }

  if (auto* tape = detail::recording_tape<T>(inputs)) {
    std::vector<typename Tape<T>::NodePtr> nodes;
    for (const auto& t : inputs) nodes.push_back(t.node_ptr());
    tape->record(op, out.node_ptr(), [nodes, offsets, batch, channels, n](std::span<const T> dy) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto dx = detail::grad_target(nodes[k]);
        if (dx.empty()) continue;
        const Index c = nodes[k]->shape[1];
        for (Index b = 0; b < batch; ++b)
          for (Index i = 0; i < c * n; ++i)
            dx[static_cast<std::size_t>(b * c * n + i)] += dy[static_cast<std::size_t>((b * channels + offsets[k]) * n + i)];
      }
    });
  }
  return out;
}

/// Channels [begin, begin + count) of a 5-D tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& input, Index begin, Index count) {
  constexpr const char* op = "slice_channels";
  input.shape().require_rank(5, op);
  const Index channels = input.dim(1);
  if (begin < 0 || count < 1 || begin + count > channels) {
    throw DimensionError(std::string(op) + ": channel range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + input.shape().to_string());
  }
  const Index batch = input.dim(0);
  const Index n = input.shape().spatial_numel();
  Tensor<T> out(make_shape5(batch, count, input.shape().spatial()));
  auto x = input.data();
  auto y = out.mutable_data();
  for (Index b = 0; b < batch; ++b)
    std::copy_n(x.begin() + (b * channels + begin) * n, count * n, y.begin() + b * count * n);

  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record(op, out.node_ptr(), [xn = input.node_ptr(), batch, channels, begin, count, n](std::span<const T> dy) {
      auto dx = detail::grad_target(xn);
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < count * n; ++i)
          dx[static_cast<std::size_t>((b * channels + begin) * n + i)] += dy[static_cast<std::size_t>(b * count * n + i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Broadcasting binary ops

namespace detail {

/// Output shape and per-operand strides (0 on broadcast axes) for equal-rank operands.
struct Broadcast {
  std::vector<Index> out;
  std::vector<Index> stride_a;
  std::vector<Index> stride_b;

  Broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.rank() != b.rank()) {
      throw DimensionError(std::string(op) + ": rank mismatch " + a.to_string() + " vs " + b.to_string());
    }
    const std::size_t r = a.rank();
    out.resize(r);
    stride_a.assign(r, 0);
    stride_b.assign(r, 0);
    Index sa = 1, sb = 1;
    for (std::size_t i = r; i-- > 0;) {
      const Index da = a[i], db = b[i];
      if (da != db && da != 1 && db != 1) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + a.to_string() + " with " + b.to_string());
      }
      out[i] = std::max(da, db);
      stride_a[i] = da == 1 ? 0 : sa;
      stride_b[i] = db == 1 ? 0 : sb;
      sa *= da;
      sb *= db;
    }
  }

  /// Calls fn(out_index, a_offset, b_offset) over the output in raster order.
  template <class Fn>
  void for_each(Fn&& fn) const {
    const std::size_t r = out.size();
    Index total = 1;
    for (Index d : out) total *= d;
    std::vector<Index> idx(r, 0);
    Index oa = 0, ob = 0;
    for (Index o = 0; o < total; ++o) {
      fn(o, oa, ob);
      for (std::size_t i = r; i-- > 0;) {
        ++idx[i];
        oa += stride_a[i];
        ob += stride_b[i];
        if (idx[i] < out[i]) break;
        oa -= stride_a[i] * out[i];
        ob -= stride_b[i] * out[i];
        idx[i] = 0;
      }
    }
  }
};

enum class BinaryKind { add, mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const char* op = kind == BinaryKind::add ? "add" : "mul";
  Broadcast bc(a.shape(), b.shape(), op);
  Tensor<T> out{Shape(bc.out)};
  auto y = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = kind == BinaryKind::add ? av[i] + bv[i] : av[i] * bv[i];
  } else {
    bc.for_each([&](Index o, Index ia, Index ib) {
      const T x = av[static_cast<std::size_t>(ia)], z = bv[static_cast<std::size_t>(ib)];
      y[static_cast<std::size_t>(o)] = kind == BinaryKind::add ? x + z : x * z;
    });
  }
  check_finite<T>(y, op);

  if (auto* tape = recording_tape<T>({&a, &b})) {
    tape->record(op, out.node_ptr(), [bc, kind, an = a.node_ptr(), bn = b.node_ptr()](std::span<const T> dy) {
      auto da = grad_target(an);
      auto db = grad_target(bn);
      const auto& av = an->value;
      const auto& bv = bn->value;
      bc.for_each([&](Index o, Index ia, Index ib) {
        const T g = dy[static_cast<std::size_t>(o)];
        if (!da.empty()) da[static_cast<std::size_t>(ia)] += kind == BinaryKind::add ? g : g * bv[static_cast<std::size_t>(ib)];
        if (!db.empty()) db[static_cast<std::size_t>(ib)] += kind == BinaryKind::add ? g : g * av[static_cast<std::size_t>(ia)];
      });
    });
  }
  return out;
}

}  // namespace detail

/// Elementwise sum with size-1 broadcasting over equal-rank shapes.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add);
}

/// Elementwise product with size-1 broadcasting over equal-rank shapes.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul);
}

template <class T>
Tensor<T> scale(const Tensor<T>& input, T factor) {
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
  detail::check_finite<T>(y, "scale");
  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record("scale", out.node_ptr(), [xn = input.node_ptr(), factor](std::span<const T> dy) {
      auto dx = detail::grad_target(xn);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

/// Sum of all elements as a [1] tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& input) {
  T s{0};
  for (T v : input.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  detail::check_finite<T>(out.data(), "sum");
  if (auto* tape = detail::recording_tape<T>({&input})) {
    tape->record("sum", out.node_ptr(), [xn = input.node_ptr()](std::span<const T> dy) {
      auto dx = detail::grad_target(xn);
      for (auto& v : dx) v += dy[0];
    });
  }
  return out;
}

}  // namespace focalfuse
