// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "focalfuse/arch/config.hpp"
#include "focalfuse/arch/decoder.hpp"
#include "focalfuse/arch/encoder.hpp"
#include "focalfuse/arch/focal_fuse.hpp"
#include "focalfuse/arch/msf_dense.hpp"

namespace focalfuse::arch {

/// Everything computed by one forward pass.
template <class T>
struct ForwardTrace {
  StreamFeatures<T> features;
  std::optional<FocalState<T>> focal;  // focal_fuse only
  std::array<Tensor<T>, kNumScales> fused;
  Tensor<T> logits;
};

/// encoder -> (focal fuse | dense multi-scale fusion) -> decoder.
/// Owns its ParamStore; parameters are created in a fixed order from `seed`.
template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    Initializer init(seed);
    encoder_ = Encoder<T>(cfg, params_, init);
    if (cfg.variant == Variant::focal_fuse) {
      focal_ = FocalFuseBlock<T>(cfg, params_, init);
    } else {
      msf_ = MsfDenseBlock<T>(cfg, params_, init);
    }
    decoder_ = Decoder<T>(cfg, params_, init);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] ParamStore<T>& params() { return params_; }
  [[nodiscard]] const ParamStore<T>& params() const { return params_; }
  [[nodiscard]] const Encoder<T>& encoder() const { return encoder_; }
  [[nodiscard]] const Decoder<T>& decoder() const { return decoder_; }
  [[nodiscard]] const FocalFuseBlock<T>& focal_block() const { return focal_; }
  [[nodiscard]] const MsfDenseBlock<T>& msf_block() const { return msf_; }

  [[nodiscard]] ForwardTrace<T> trace(const Tensor<T>& volume) const {
    ForwardTrace<T> t;
    t.features = encoder_.forward(volume);
    if (config_.variant == Variant::focal_fuse) {
      t.focal = focal_.forward(t.features.streams);
      t.fused = t.focal->outputs;
    } else {
      t.fused = msf_(t.features.streams);
    }
    t.logits = decoder_.forward(t.fused, t.features.bottleneck);
    return t;
  }

  /// Logits [B, num_classes, W, H, Z].
  [[nodiscard]] Tensor<T> forward(const Tensor<T>& volume) const { return trace(volume).logits; }

 private:
  ModelConfig config_;
  ParamStore<T> params_;
  Encoder<T> encoder_;
  FocalFuseBlock<T> focal_;
  MsfDenseBlock<T> msf_;
  Decoder<T> decoder_;
};

template <class T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& volume) {
  return model.forward(volume);
}

}  // namespace focalfuse::arch
