// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "focalfuse/arch/params.hpp"

namespace focalfuse::arch {

// Thin parameter holders over the tensor primitives. Each holds handles that
// share storage with the owning ParamStore.

template <class T>
struct Conv3dLayer {
  Tensor<T> weight;  // [Cout, Cin/groups, k, k, k]
  Tensor<T> bias;    // [Cout]
  ConvSpec spec;

  static Conv3dLayer make(ParamStore<T>& store, Initializer& init, const std::string& name, Index cin, Index cout,
                          ConvSpec spec) {
    Conv3dLayer l;
    l.spec = spec;
    const Index k = spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
    l.weight = store.add(name + ".weight", Shape{cout, cin / spec.groups, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
    l.bias = store.add(name + ".bias", Shape{cout});
    init.he_normal(l.weight, static_cast<double>(cin / spec.groups * k));
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, spec); }
};

template <class T>
struct ConvTranspose3dLayer {
  Tensor<T> weight;  // [Cin, Cout/groups, k, k, k]
  Tensor<T> bias;    // [Cout]
  ConvSpec spec;

  static ConvTranspose3dLayer make(ParamStore<T>& store, Initializer& init, const std::string& name, Index cin,
                                   Index cout, ConvSpec spec) {
    ConvTranspose3dLayer l;
    l.spec = spec;
    const Index k = spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
    const Index s = spec.stride[0] * spec.stride[1] * spec.stride[2];
    l.weight = store.add(name + ".weight", Shape{cin, cout / spec.groups, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
    l.bias = store.add(name + ".bias", Shape{cout});
    // Taps reaching one output voxel on average.
    init.he_normal(l.weight, static_cast<double>(cin / spec.groups * k) / static_cast<double>(s));
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose3d(x, weight, bias, spec); }
};

/// Per-voxel channel map (1x1x1 convolution).
template <class T>
struct LinearLayer {
  Tensor<T> weight;  // [Cout, Cin]
  Tensor<T> bias;    // [Cout]

  static LinearLayer make(ParamStore<T>& store, Initializer& init, const std::string& name, Index cin, Index cout) {
    LinearLayer l;
    l.weight = store.add(name + ".weight", Shape{cout, cin});
    l.bias = store.add(name + ".bias", Shape{cout});
    init.he_normal(l.weight, static_cast<double>(cin));
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <class T>
struct InstanceNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;

  static InstanceNormLayer make(ParamStore<T>& store, const std::string& name, Index channels) {
    InstanceNormLayer l;
    l.gamma = store.add(name + ".gamma", Shape{channels}, T{1});
    l.beta = store.add(name + ".beta", Shape{channels});
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return instance_norm(x, gamma, beta); }
};

}  // namespace focalfuse::arch
