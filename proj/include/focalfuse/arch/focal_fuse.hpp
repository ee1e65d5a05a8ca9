// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "focalfuse/arch/config.hpp"
#include "focalfuse/arch/layers.hpp"
#include "focalfuse/arch/scale_align.hpp"

namespace focalfuse::arch {

/// Checks the StreamFeatures contract: stream a has base * 2^(a-1) channels and
/// exactly half the extents of stream a-1.
template <class T>
void check_streams(const ModelConfig& cfg, const std::array<Tensor<T>, kNumScales>& streams, const char* op) {
  for (int a = 0; a < kNumScales; ++a) {
    const Tensor<T>& s = streams[static_cast<std::size_t>(a)];
    if (!s.defined()) throw DimensionError(std::string(op) + ": stream " + std::to_string(a + 1) + " is undefined");
    s.shape().require_rank(5, op);
    if (s.dim(1) != cfg.channels(a + 1)) {
      throw DimensionError(std::string(op) + ": stream " + std::to_string(a + 1) + " has " + std::to_string(s.dim(1)) +
                           " channels, expected " + std::to_string(cfg.channels(a + 1)));
    }
    if (a > 0) {
      const auto prev = streams[static_cast<std::size_t>(a - 1)].shape().spatial();
      const auto cur = s.shape().spatial();
      for (int i = 0; i < 3; ++i) {
        if (cur[i] * 2 != prev[i] || s.dim(0) != streams[0].dim(0)) {
          throw DimensionError(std::string(op) + ": stream " + std::to_string(a + 1) + " " + s.shape().to_string() +
                               " is not half the resolution of stream " + std::to_string(a));
        }
      }
    }
  }
}

/// Intermediate values of one focal-fuse pass.
template <class T>
struct FocalState {
  /// levels[a][l] = F_{a,l} for l = 0..N (l = 0 is the input projection).
  std::array<std::vector<Tensor<T>>, kNumScales> levels;
  /// Global-average-pooled F_{a,N}, [B, C, 1, 1, 1]; undefined when the global level is disabled.
  std::array<Tensor<T>, kNumScales> global;
  /// G_a: one gate channel per aggregated level (N + 1, or N without the global level).
  std::array<Tensor<T>, kNumScales> gates;
  /// Aggregated context after the channel-mixing projection.
  std::array<Tensor<T>, kNumScales> modulator;
  /// Y_a, shaped like I_a.
  std::array<Tensor<T>, kNumScales> outputs;
};

/// Modulated output of one stream: the context modulator applied to the query
/// projection of that same stream.
template <class T>
Tensor<T> modulate(const Tensor<T>& modulator, const Tensor<T>& query) {
  return mul(modulator, query);
}

/// Multi-scale focal modulation over the four resolution streams.
///
/// For each level l = 1..N and stream a, the previous level of every stream is
/// brought to stream a (ScaleAligner), fused by a 1x1x1 conv, passed through a
/// depthwise 3^3 conv and GELU. The global level is the spatial mean of level N.
/// Gates are a raw linear map of F_{a,0}; the gated sum over levels goes through
/// a channel-mixing projection and multiplies a linear query of I_a.
template <class T>
class FocalFuseBlock {
 public:
  struct LevelStream {
    std::vector<ScaleAligner<T>> aligners;  // sources in ascending order, skipping the stream itself
    LinearLayer<T> fuse;
    Conv3dLayer<T> depthwise;
  };

  FocalFuseBlock() = default;
  FocalFuseBlock(const ModelConfig& cfg, ParamStore<T>& store, Initializer& init) : config_(cfg) {
    const Index n_gates = cfg.focal_levels + (cfg.global_context ? 1 : 0);
    for (int a = 1; a <= kNumScales; ++a) {
      const std::string s = "focal.s" + std::to_string(a);
      in_proj_[a - 1] = LinearLayer<T>::make(store, init, s + ".in_proj", cfg.channels(a), cfg.channels(a));
    }
    levels_.resize(static_cast<std::size_t>(cfg.focal_levels));
    for (Index l = 1; l <= cfg.focal_levels; ++l) {
      for (int a = 1; a <= kNumScales; ++a) {
        const std::string p = "focal.l" + std::to_string(l) + ".s" + std::to_string(a);
        const Index c = cfg.channels(a);
        LevelStream& ls = levels_[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(a - 1)];
        for (int b = 1; b <= kNumScales; ++b) {
          if (b == a) continue;
          ls.aligners.emplace_back(cfg, store, init, p + ".from" + std::to_string(b), b, a);
        }
        ls.fuse = LinearLayer<T>::make(store, init, p + ".fuse", kNumScales * c, c);
        ls.depthwise = Conv3dLayer<T>::make(store, init, p + ".dw", c, c, ConvSpec::same3(c));
      }
    }
    for (int a = 1; a <= kNumScales; ++a) {
      const std::string s = "focal.s" + std::to_string(a);
      const Index c = cfg.channels(a);
      gate_[a - 1] = LinearLayer<T>::make(store, init, s + ".gate", c, n_gates);
      proj_[a - 1] = LinearLayer<T>::make(store, init, s + ".proj", c, c);
      query_[a - 1] = LinearLayer<T>::make(store, init, s + ".query", c, c);
    }
  }

  [[nodiscard]] FocalState<T> forward(const std::array<Tensor<T>, kNumScales>& streams) const {
    check_streams(config_, streams, "focal_fuse");
    const auto N = static_cast<std::size_t>(config_.focal_levels);
    FocalState<T> st;
    for (std::size_t a = 0; a < kNumScales; ++a) st.levels[a].push_back(in_proj_[a](streams[a]));

    for (std::size_t l = 1; l <= N; ++l) {
      std::array<Tensor<T>, kNumScales> next;
      for (std::size_t a = 0; a < kNumScales; ++a) {
        const LevelStream& ls = levels_[l - 1][a];
        std::vector<Tensor<T>> gathered{st.levels[a][l - 1]};
        for (const auto& al : ls.aligners) {
          gathered.push_back(al(st.levels[static_cast<std::size_t>(al.from() - 1)][l - 1]));
        }
        next[a] = gelu(ls.depthwise(ls.fuse(concat_channels(gathered))));
      }
      for (std::size_t a = 0; a < kNumScales; ++a) st.levels[a].push_back(next[a]);
    }

    for (std::size_t a = 0; a < kNumScales; ++a) {
      st.gates[a] = gate_[a](st.levels[a][0]);
      Tensor<T> acc;
      for (std::size_t l = 1; l <= N; ++l) {
        Tensor<T> term = mul(st.levels[a][l], slice_channels(st.gates[a], static_cast<Index>(l - 1), 1));
        acc = acc.defined() ? add(acc, term) : term;
      }
      if (config_.global_context) {
        st.global[a] = global_avg_pool(st.levels[a][N]);
        // [B, C, 1, 1, 1] x [B, 1, W, H, Z] broadcasts to the full stream.
        acc = add(acc, mul(st.global[a], slice_channels(st.gates[a], static_cast<Index>(N), 1)));
      }
      st.modulator[a] = proj_[a](acc);
      st.outputs[a] = modulate(st.modulator[a], query_[a](streams[a]));
    }
    return st;
  }

  [[nodiscard]] std::array<Tensor<T>, kNumScales> operator()(const std::array<Tensor<T>, kNumScales>& streams) const {
    return forward(streams).outputs;
  }

 private:
  ModelConfig config_;
  std::array<LinearLayer<T>, kNumScales> in_proj_;
  std::vector<std::array<LevelStream, kNumScales>> levels_;
  std::array<LinearLayer<T>, kNumScales> gate_;
  std::array<LinearLayer<T>, kNumScales> proj_;
  std::array<LinearLayer<T>, kNumScales> query_;
};

}  // namespace focalfuse::arch
