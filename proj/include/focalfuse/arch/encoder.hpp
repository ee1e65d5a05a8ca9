// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "focalfuse/arch/config.hpp"
#include "focalfuse/arch/layers.hpp"

namespace focalfuse::arch {

/// Encoder outputs: skip features I_1..I_4 (pre-pooling, scale a at 1/2^(a-1)
/// resolution) and the bottleneck I_5.
template <class T>
struct StreamFeatures {
  std::array<Tensor<T>, kNumScales> streams;
  Tensor<T> bottleneck;
};

/// (conv3 -> instance norm -> relu) x 2.
template <class T>
struct EncoderBlock {
  Conv3dLayer<T> conv1;
  InstanceNormLayer<T> norm1;
  Conv3dLayer<T> conv2;
  InstanceNormLayer<T> norm2;

  static EncoderBlock make(ParamStore<T>& store, Initializer& init, const std::string& name, Index cin, Index cout) {
    EncoderBlock b;
    b.conv1 = Conv3dLayer<T>::make(store, init, name + ".conv1", cin, cout, ConvSpec::same3());
    b.norm1 = InstanceNormLayer<T>::make(store, name + ".norm1", cout);
    b.conv2 = Conv3dLayer<T>::make(store, init, name + ".conv2", cout, cout, ConvSpec::same3());
    b.norm2 = InstanceNormLayer<T>::make(store, name + ".norm2", cout);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return relu(norm2(conv2(relu(norm1(conv1(x)))))); }
};

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, ParamStore<T>& store, Initializer& init) : config_(cfg) {
    Index cin = cfg.input_channels;
    for (int k = 1; k <= 5; ++k) {
      blocks_[static_cast<std::size_t>(k - 1)] =
          EncoderBlock<T>::make(store, init, "encoder.block" + std::to_string(k), cin, cfg.channels(k));
      cin = cfg.channels(k);
    }
  }

  /// Blocks 1..4 export their pre-pool activation and feed a max-pool to the next
  /// block; block 5 exports the bottleneck.
  StreamFeatures<T> forward(const Tensor<T>& volume) const {
    volume.shape().require_rank(5, "encoder");
    if (volume.dim(1) != config_.input_channels) {
      throw ConfigError("encoder expects " + std::to_string(config_.input_channels) + " input channels, got " +
                        std::to_string(volume.dim(1)));
    }
    config_.validate_extents(volume.shape().spatial());
    StreamFeatures<T> out;
    Tensor<T> x = volume;
    for (int a = 0; a < kNumScales; ++a) {
      out.streams[static_cast<std::size_t>(a)] = blocks_[static_cast<std::size_t>(a)](x);
      x = pool3d(out.streams[static_cast<std::size_t>(a)], PoolKind::max);
    }
    out.bottleneck = blocks_[4](x);
    return out;
  }

 private:
  ModelConfig config_;
  std::array<EncoderBlock<T>, 5> blocks_;
};

}  // namespace focalfuse::arch
