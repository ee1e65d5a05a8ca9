// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "focalfuse/arch/config.hpp"
#include "focalfuse/arch/layers.hpp"

namespace focalfuse::arch {

/// Moves a feature map from resolution stream `from` to stream `to` (1-based,
/// stream a at 1/2^(a-1) resolution with base * 2^(a-1) channels).
///
/// Downward: one learned stride-2 depthwise conv, then avg-pool for the
/// remaining factor. Upward: one learned stride-2 depthwise transposed conv,
/// then trilinear resize for the remaining factor. A 1x1x1 projection maps the
/// channels to the destination stream's width.
template <class T>
class ScaleAligner {
 public:
  ScaleAligner() = default;
  ScaleAligner(const ModelConfig& cfg, ParamStore<T>& store, Initializer& init, const std::string& name, int from,
               int to)
      : from_(from), to_(to) {
    if (from == to) throw ConfigError("scale_align: source and destination streams must differ");
    if (from < 1 || from > kNumScales || to < 1 || to > kNumScales) {
      throw ConfigError("scale_align: streams must lie in 1..4");
    }
    const Index c_from = cfg.channels(from);
    if (to > from) {
      down_ = Conv3dLayer<T>::make(store, init, name + ".down", c_from, c_from, ConvSpec::stride2(c_from));
    } else {
      up_ = ConvTranspose3dLayer<T>::make(store, init, name + ".up", c_from, c_from, ConvSpec::stride2(c_from));
    }
    channel_map_ = LinearLayer<T>::make(store, init, name + ".map", c_from, cfg.channels(to));
  }

  [[nodiscard]] int from() const { return from_; }
  [[nodiscard]] int to() const { return to_; }

  Tensor<T> operator()(const Tensor<T>& x) const {
    x.shape().require_rank(5, "scale_align");
    Tensor<T> y;
    if (to_ > from_) {
      y = down_(x);
      for (int k = from_ + 1; k < to_; ++k) y = pool3d(y, PoolKind::avg);
    } else {
      y = up_(x);
      if (from_ - to_ > 1) {
        const Index f = Index{1} << (from_ - to_);
        const auto s = x.shape().spatial();
        y = resize_trilinear(y, {s[0] * f, s[1] * f, s[2] * f});
      }
    }
    return channel_map_(y);
  }

 private:
  int from_ = 1;
  int to_ = 2;
  Conv3dLayer<T> down_;
  ConvTranspose3dLayer<T> up_;
  LinearLayer<T> channel_map_;
};

}  // namespace focalfuse::arch
