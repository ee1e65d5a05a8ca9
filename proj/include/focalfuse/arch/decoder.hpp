// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "focalfuse/arch/config.hpp"
#include "focalfuse/arch/layers.hpp"

namespace focalfuse::arch {

/// U-shaped decoder. The bottleneck is first upsampled x2 by a transposed conv;
/// stages then run from stream 4 up to stream 1:
///   D_a = relu(norm(conv3(concat(up, Y_a)))),  up = convT(D_{a+1}) (or the upsampled bottleneck for a = 4),
/// and a 1x1x1 head maps D_1 to class logits.
template <class T>
class Decoder {
 public:
  struct Stage {
    ConvTranspose3dLayer<T> up;  // unused for stage 4, which takes the upsampled bottleneck
    Conv3dLayer<T> conv;
    InstanceNormLayer<T> norm;
  };

  Decoder() = default;
  Decoder(const ModelConfig& cfg, ParamStore<T>& store, Initializer& init) {
    bottleneck_up_ = ConvTranspose3dLayer<T>::make(store, init, "decoder.up5", cfg.channels(5), cfg.channels(4),
                                                   ConvSpec::stride2());
    for (int a = kNumScales; a >= 1; --a) {
      const std::string p = "decoder.stage" + std::to_string(a);
      Stage& s = stages_[static_cast<std::size_t>(a - 1)];
      if (a < kNumScales) {
        s.up = ConvTranspose3dLayer<T>::make(store, init, p + ".up", cfg.channels(a + 1), cfg.channels(a),
                                             ConvSpec::stride2());
      }
      s.conv = Conv3dLayer<T>::make(store, init, p + ".conv", 2 * cfg.channels(a), cfg.channels(a), ConvSpec::same3());
      s.norm = InstanceNormLayer<T>::make(store, p + ".norm", cfg.channels(a));
    }
    head_ = LinearLayer<T>::make(store, init, "decoder.head", cfg.channels(1), cfg.num_classes);
  }

  /// First decoder block: bottleneck upsampled to stream-4 resolution.
  [[nodiscard]] Tensor<T> upsample_bottleneck(const Tensor<T>& bottleneck) const { return bottleneck_up_(bottleneck); }

  /// Transposed-conv upsampling of D_{a+1} toward stream a.
  [[nodiscard]] Tensor<T> upsample(int a, const Tensor<T>& previous) const {
    return stages_[static_cast<std::size_t>(a - 1)].up(previous);
  }

  /// One stage; `upsampled` must match the resolution of `skip`.
  [[nodiscard]] Tensor<T> stage(int a, const Tensor<T>& upsampled, const Tensor<T>& skip) const {
    if (upsampled.shape().spatial() != skip.shape().spatial()) {
      throw DimensionError("decoder stage " + std::to_string(a) + ": upsampled " + upsampled.shape().to_string() +
                           " does not match skip " + skip.shape().to_string());
    }
    const Stage& s = stages_[static_cast<std::size_t>(a - 1)];
    return relu(s.norm(s.conv(concat_channels(std::vector<Tensor<T>>{upsampled, skip}))));
  }

  [[nodiscard]] Tensor<T> head(const Tensor<T>& d1) const { return head_(d1); }

  [[nodiscard]] Tensor<T> forward(const std::array<Tensor<T>, kNumScales>& skips, const Tensor<T>& bottleneck) const {
    Tensor<T> d = stage(kNumScales, upsample_bottleneck(bottleneck), skips[kNumScales - 1]);
    for (int a = kNumScales - 1; a >= 1; --a) d = stage(a, upsample(a, d), skips[static_cast<std::size_t>(a - 1)]);
    return head(d);
  }

 private:
  ConvTranspose3dLayer<T> bottleneck_up_;
  std::array<Stage, kNumScales> stages_;
  LinearLayer<T> head_;
};

}  // namespace focalfuse::arch
