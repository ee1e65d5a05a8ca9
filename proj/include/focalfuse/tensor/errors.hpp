// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace focalfuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents, channel counts or ranks.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a numerically degenerate reduction.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or phantom configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid sample contents (out-of-range labels, mismatched ids).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file: bad magic, truncated payload, digest mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the reverse-mode tape.
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Metric has no value for the given masks (e.g. Hausdorff on an empty mask).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

}  // namespace focalfuse
