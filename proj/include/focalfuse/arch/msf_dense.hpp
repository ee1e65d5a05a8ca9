// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "focalfuse/arch/focal_fuse.hpp"

namespace focalfuse::arch {

/// Densely connected multi-scale fusion (3D-MSF).
///
/// Layer l of stream a consumes every earlier layer of its own stream plus
/// layer l-1 of the other three streams (resampled with ScaleAligner), i.e.
/// l * C_a + 3 * C_a channels, and maps them to C_a with a depthwise 3^3 conv
/// followed by a pointwise projection.
template <class T>
class MsfDenseBlock {
 public:
  struct LayerStream {
    std::vector<ScaleAligner<T>> aligners;
    Conv3dLayer<T> depthwise;
    LinearLayer<T> pointwise;
  };

  MsfDenseBlock() = default;
  MsfDenseBlock(const ModelConfig& cfg, ParamStore<T>& store, Initializer& init) : config_(cfg) {
    layers_.resize(static_cast<std::size_t>(cfg.dense_layers_per_block));
    for (Index l = 1; l <= cfg.dense_layers_per_block; ++l) {
      for (int a = 1; a <= kNumScales; ++a) {
        const std::string p = "msf.l" + std::to_string(l) + ".s" + std::to_string(a);
        const Index c = cfg.channels(a);
        const Index cin = input_channels(static_cast<int>(l), a);
        LayerStream& ls = layers_[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(a - 1)];
        for (int b = 1; b <= kNumScales; ++b) {
          if (b == a) continue;
          ls.aligners.emplace_back(cfg, store, init, p + ".from" + std::to_string(b), b, a);
        }
        ls.depthwise = Conv3dLayer<T>::make(store, init, p + ".dw", cin, cin, ConvSpec::same3(cin));
        ls.pointwise = LinearLayer<T>::make(store, init, p + ".pw", cin, c);
      }
    }
  }

  /// Channels entering layer l (1-based) of stream a.
  [[nodiscard]] Index input_channels(int l, int a) const {
    return static_cast<Index>(l) * config_.channels(a) + (kNumScales - 1) * config_.channels(a);
  }

  /// layers[a][l] = I_{a,l}, l = 0..L (l = 0 is the encoder feature).
  [[nodiscard]] std::array<std::vector<Tensor<T>>, kNumScales> forward_layers(
      const std::array<Tensor<T>, kNumScales>& streams) const {
    check_streams(config_, streams, "msf_dense");
    std::array<std::vector<Tensor<T>>, kNumScales> layers;
    for (std::size_t a = 0; a < kNumScales; ++a) layers[a].push_back(streams[a]);
    for (std::size_t l = 1; l <= layers_.size(); ++l) {
      std::array<Tensor<T>, kNumScales> next;
      for (std::size_t a = 0; a < kNumScales; ++a) {
        const LayerStream& ls = layers_[l - 1][a];
        std::vector<Tensor<T>> inputs(layers[a].begin(), layers[a].end());
        for (const auto& al : ls.aligners) {
          inputs.push_back(al(layers[static_cast<std::size_t>(al.from() - 1)][l - 1]));
        }
        next[a] = ls.pointwise(ls.depthwise(concat_channels(inputs)));
      }
      for (std::size_t a = 0; a < kNumScales; ++a) layers[a].push_back(next[a]);
    }
    return layers;
  }

  [[nodiscard]] std::array<Tensor<T>, kNumScales> operator()(const std::array<Tensor<T>, kNumScales>& streams) const {
    auto layers = forward_layers(streams);
    std::array<Tensor<T>, kNumScales> out;
    for (std::size_t a = 0; a < kNumScales; ++a) out[a] = layers[a].back();
    return out;
  }

 private:
  ModelConfig config_;
  std::vector<std::array<LayerStream, kNumScales>> layers_;
};

}  // namespace focalfuse::arch
