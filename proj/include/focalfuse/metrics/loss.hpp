// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focalfuse/core.hpp"

namespace focalfuse::metrics {

inline constexpr double kDiceSmooth = 1e-5;

/// 0.5 * soft dice + 0.5 * cross-entropy.
///
/// logits: [B, C, W, H, Z]; labels: B*W*H*Z class ids in raster order.
/// Soft dice = 1 - mean_c (2 sum p g + eps) / (sum p + sum g + eps) over all C
/// classes (background included), sums running over batch and space. CE is the
/// mean negative log-probability of the true class.
template <class T>
Tensor<T> dice_ce_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  logits.shape().require_rank(5, "dice_ce_loss");
  const Index B = logits.dim(0);
  const Index C = logits.dim(1);
  const Index S = logits.shape().spatial_numel();
  const Index M = B * S;
  if (static_cast<Index>(labels.size()) != M) {
    throw DimensionError("dice_ce_loss: " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape().to_string());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= C) {
      throw DataError("dice_ce_loss: label " + std::to_string(labels[i]) + " at voxel " + std::to_string(i) +
                      " is outside [0, " + std::to_string(C) + ")");
    }
  }

  const auto z = logits.data();
  // Softmax probabilities in logits layout, plus log p of the true class.
  std::vector<T> p(z.size());
  T ce{0};
  for (Index b = 0; b < B; ++b) {
    const Index base = b * C * S;
    for (Index s = 0; s < S; ++s) {
      T mx = z[base + s];
      for (Index c = 1; c < C; ++c) mx = std::max(mx, z[base + c * S + s]);
      T denom{0};
      for (Index c = 0; c < C; ++c) denom += std::exp(z[base + c * S + s] - mx);
      const T log_denom = std::log(denom);
      for (Index c = 0; c < C; ++c) p[base + c * S + s] = std::exp(z[base + c * S + s] - mx) / denom;
      const Index y = labels[b * S + s];
      ce -= z[base + y * S + s] - mx - log_denom;
    }
  }
  ce /= static_cast<T>(M);

  std::vector<T> inter(C, T{0}), psum(C, T{0}), gsum(C, T{0});
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) {
      const T* pc = p.data() + (b * C + c) * S;
      for (Index s = 0; s < S; ++s) {
        psum[c] += pc[s];
        if (labels[b * S + s] == c) {
          inter[c] += pc[s];
          gsum[c] += T{1};
        }
      }
    }
  }
  const T eps = static_cast<T>(kDiceSmooth);
  T dice_mean{0};
  for (Index c = 0; c < C; ++c) dice_mean += (T{2} * inter[c] + eps) / (psum[c] + gsum[c] + eps);
  dice_mean /= static_cast<T>(C);

  const T loss = T{0.5} * (T{1} - dice_mean) + T{0.5} * ce;
  Tensor<T> out = Tensor<T>::scalar(loss);
  focalfuse::detail::check_finite<T>(out.data(), "dice_ce_loss");

  if (auto* tape = focalfuse::detail::recording_tape<T>({&logits})) {
    std::vector<std::uint8_t> y(labels.begin(), labels.end());
    tape->record("dice_ce_loss", out.node_ptr(),
                 [xn = logits.node_ptr(), p = std::move(p), y = std::move(y), inter = std::move(inter),
                  psum = std::move(psum), gsum = std::move(gsum), B, C, S, M, eps](std::span<const T> dy) {
                   auto dx = focalfuse::detail::grad_target(xn);
                   if (dx.empty()) return;
                   // dDice/dp_{v,c} = -(1/C) (2 g / D_c - (2 I_c + eps) / D_c^2), D_c = P_c + G_c + eps.
                   std::vector<T> a(C), bterm(C);
                   for (Index c = 0; c < C; ++c) {
                     const T d = psum[c] + gsum[c] + eps;
                     a[c] = -T{2} / (static_cast<T>(C) * d);
                     bterm[c] = (T{2} * inter[c] + eps) / (static_cast<T>(C) * d * d);
                   }
                   const T half = T{0.5} * dy[0];
                   const T inv_m = T{1} / static_cast<T>(M);
                   std::vector<T> q(C);
                   for (Index b = 0; b < B; ++b) {
                     const Index base = b * C * S;
                     for (Index s = 0; s < S; ++s) {
                       const Index yc = y[b * S + s];
                       T pq{0};
                       for (Index c = 0; c < C; ++c) {
                         q[c] = bterm[c] + (c == yc ? a[c] : T{0});
                         pq += p[base + c * S + s] * q[c];
                       }
                       for (Index c = 0; c < C; ++c) {
                         const T pc = p[base + c * S + s];
                         const T g_dice = pc * (q[c] - pq);
                         const T g_ce = (pc - (c == yc ? T{1} : T{0})) * inv_m;
                         dx[base + c * S + s] += half * (g_dice + g_ce);
                       }
                     }
                   }
                 });
  }
  return out;
}

/// Voxelwise argmax over the channel axis of [B, C, W, H, Z] logits. Ties go to
/// the lowest class id.
template <class T>
std::vector<std::uint8_t> argmax_channels(const Tensor<T>& logits) {
  logits.shape().require_rank(5, "argmax_channels");
  const Index B = logits.dim(0);
  const Index C = logits.dim(1);
  if (C > 256) throw DimensionError("argmax_channels: more than 256 classes");
  const Index S = logits.shape().spatial_numel();
  const auto z = logits.data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(B * S));
  for (Index b = 0; b < B; ++b) {
    for (Index s = 0; s < S; ++s) {
      Index best = 0;
      for (Index c = 1; c < C; ++c) {
        if (z[(b * C + c) * S + s] > z[(b * C + best) * S + s]) best = c;
      }
      out[b * S + s] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace focalfuse::metrics
