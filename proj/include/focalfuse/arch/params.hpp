// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "focalfuse/core.hpp"

namespace focalfuse::arch {

/// Named, ordered collection of learnable tensors. Insertion order is the
/// canonical order for checkpoints and reports.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Tensor<T> add(const std::string& name, Shape shape, T fill = T{0}) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Tensor<T> t(std::move(shape), fill);
    t.set_requires_grad(true);
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

  [[nodiscard]] const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return tensors_[it->second];
  }
  [[nodiscard]] Tensor<T>& at(const std::string& name) {
    return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).at(name));
  }

  [[nodiscard]] std::size_t size() const { return tensors_.size(); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] const Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
  [[nodiscard]] Tensor<T>& tensor(std::size_t i) { return tensors_.at(i); }

  [[nodiscard]] Index total_count() const {
    Index n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Seeded fan-in-scaled normal initializer (std = sqrt(2 / fan_in)).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  void he_normal(Tensor<T>& t, double fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng_));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace focalfuse::arch
