// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "focalfuse/tensor/errors.hpp"

namespace focalfuse::data {

/// Seeded shuffle of [0, n). Fisher-Yates with a bounded draw written out here
/// so the order does not depend on the standard library's std::shuffle.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    // Rejection sampling for an unbiased draw in [0, i).
    const std::uint64_t bound = i;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r = 0;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(r % bound)]);
  }
  return idx;
}

/// Disjoint, exhaustive train/test split; round(train_fraction * n) samples go
/// to the training side.
template <class S>
std::pair<std::vector<S>, std::vector<S>> split_dataset(const std::vector<S>& samples, double train_fraction,
                                                        std::uint64_t seed) {
  if (samples.size() < 2) throw ConfigError("split_dataset needs at least 2 samples");
  const auto n = samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (!(train_fraction > 0.0 && train_fraction < 1.0) || n_train == 0 || n_train >= n) {
    throw ConfigError("split_dataset: train fraction " + std::to_string(train_fraction) + " leaves one side empty");
  }
  const auto perm = seeded_permutation(n, seed);
  std::pair<std::vector<S>, std::vector<S>> out;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(samples[perm[i]]);
  return out;
}

}  // namespace focalfuse::data
