// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "focalfuse/data/volume.hpp"

namespace focalfuse::data {

/// splitmix64 finalizer; used to derive independent per-sample seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 1));
}

/// Axis-aligned ellipsoid in voxel-index coordinates.
struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};

  [[nodiscard]] bool contains(Index w, Index h, Index z) const {
    const std::array<double, 3> p{static_cast<double>(w), static_cast<double>(h), static_cast<double>(z)};
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = (p[i] - center[i]) / radii[i];
      s += d * d;
    }
    return s <= 1.0;
  }
};

/// Synthetic phantom recipe: one ellipsoid per foreground class with mean
/// intensity c / (num_classes - 1) over a zero background, plus Gaussian noise.
/// Radii are drawn as fractions of the extent per axis.
///
/// Text form is `key = value` lines like ModelConfig.
struct PhantomSpec {
  Extents extents{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  int num_classes = 6;
  double radius_min = 0.12;
  double radius_max = 0.25;
  double noise_std = 0.05;
  /// Each class must keep at least this fraction of its ellipsoid visible
  /// after higher ids are painted over it.
  double min_visible = 0.5;
  int max_attempts = 200;
  std::uint64_t seed = 0;

  void validate() const {
    for (Index e : extents) {
      if (e < 16 || e % 16 != 0) throw ConfigError("phantom extents must be positive multiples of 16");
    }
    if (num_classes < 2 || num_classes > 256) throw ConfigError("phantom num_classes must be in [2, 256]");
    if (!(radius_min > 0.0) || !(radius_max >= radius_min)) throw ConfigError("phantom radii: need 0 < min <= max");
    if (radius_max >= 0.5) throw ConfigError("phantom radius_max must be below 0.5 so ellipsoids fit inside");
    for (Index e : extents) {
      if (radius_min * static_cast<double>(e - 1) < 1.0) {
        throw ConfigError("phantom radius_min is below one voxel for extent " + std::to_string(e));
      }
    }
    if (!(noise_std >= 0.0)) throw ConfigError("phantom noise_std must be non-negative");
    if (!(min_visible >= 0.0 && min_visible <= 1.0)) throw ConfigError("phantom min_visible must be in [0, 1]");
    if (max_attempts < 1) throw ConfigError("phantom max_attempts must be positive");
    for (double s : spacing) {
      if (!(s > 0.0)) throw ConfigError("phantom spacing must be positive");
    }
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << "extents = " << extents[0] << ' ' << extents[1] << ' ' << extents[2] << '\n'
       << "spacing = " << detail::format_double(spacing[0]) << ' ' << detail::format_double(spacing[1]) << ' '
       << detail::format_double(spacing[2]) << '\n'
       << "num_classes = " << num_classes << '\n'
       << "radius_min = " << detail::format_double(radius_min) << '\n'
       << "radius_max = " << detail::format_double(radius_max) << '\n'
       << "noise_std = " << detail::format_double(noise_std) << '\n'
       << "min_visible = " << detail::format_double(min_visible) << '\n'
       << "max_attempts = " << max_attempts << '\n'
       << "seed = " << seed << '\n';
    return os.str();
  }

  static PhantomSpec parse(std::string_view text) {
    PhantomSpec s;
    std::istringstream in{std::string(text)};
    std::string line;
    std::map<std::string, int> seen;
    int lineno = 0;
    const auto trim = [](const std::string& x) {
      const auto b = x.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      return x.substr(b, x.find_last_not_of(" \t\r") - b + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("phantom spec line " + std::to_string(lineno) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (seen[key]++) throw ConfigError("phantom spec line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      try {
        if (key == "extents") {
          s.extents = detail::parse_triple<Index>(value, key);
        } else if (key == "spacing") {
          s.spacing = detail::parse_triple<double>(value, key);
        } else if (key == "num_classes") {
          s.num_classes = detail::parse_number<int>(value, key);
        } else if (key == "radius_min") {
          s.radius_min = detail::parse_number<double>(value, key);
        } else if (key == "radius_max") {
          s.radius_max = detail::parse_number<double>(value, key);
        } else if (key == "noise_std") {
          s.noise_std = detail::parse_number<double>(value, key);
        } else if (key == "min_visible") {
          s.min_visible = detail::parse_number<double>(value, key);
        } else if (key == "max_attempts") {
          s.max_attempts = detail::parse_number<int>(value, key);
        } else if (key == "seed") {
          s.seed = detail::parse_number<std::uint64_t>(value, key);
        } else {
          throw ConfigError("phantom spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
      } catch (const FormatError& e) {
        throw ConfigError("phantom spec line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    s.validate();
    return s;
  }
};

/// Phantom geometry with the class-painting rule (higher id wins).
struct PhantomGeometry {
  std::vector<Ellipsoid> ellipsoids;  // ellipsoids[c - 1] belongs to class c

  [[nodiscard]] std::uint8_t label_at(Index w, Index h, Index z) const {
    std::uint8_t label = 0;
    for (std::size_t i = 0; i < ellipsoids.size(); ++i) {
      if (ellipsoids[i].contains(w, h, z)) label = static_cast<std::uint8_t>(i + 1);
    }
    return label;
  }
};

inline LabelVolume rasterize(const PhantomGeometry& g, const Extents& e) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(e[0] * e[1] * e[2]), 0);
  // Paint in id order over each ellipsoid's bounding box.
  for (std::size_t i = 0; i < g.ellipsoids.size(); ++i) {
    const auto& el = g.ellipsoids[i];
    std::array<Index, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max<Index>(0, static_cast<Index>(std::floor(el.center[a] - el.radii[a])));
      hi[a] = std::min<Index>(e[a] - 1, static_cast<Index>(std::ceil(el.center[a] + el.radii[a])));
    }
    for (Index w = lo[0]; w <= hi[0]; ++w)
      for (Index h = lo[1]; h <= hi[1]; ++h)
        for (Index z = lo[2]; z <= hi[2]; ++z) {
          if (el.contains(w, h, z)) v[static_cast<std::size_t>((w * e[1] + h) * e[2] + z)] = static_cast<std::uint8_t>(i + 1);
        }
  }
  return LabelVolume(e, std::move(v));
}

/// Draws ellipsoids that fit inside the volume, redrawing the whole set until
/// every class keeps `min_visible` of its voxels.
inline PhantomGeometry sample_geometry(const PhantomSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    PhantomGeometry g;
    for (int c = 1; c < spec.num_classes; ++c) {
      Ellipsoid el;
      for (int a = 0; a < 3; ++a) {
        const double span = static_cast<double>(spec.extents[a] - 1);
        el.radii[a] = (spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng)) * span;
        el.center[a] = el.radii[a] + (span - 2.0 * el.radii[a]) * unit(rng);
      }
      g.ellipsoids.push_back(el);
    }
    const LabelVolume labels = rasterize(g, spec.extents);
    bool ok = true;
    for (int c = 1; c < spec.num_classes && ok; ++c) {
      const auto only = rasterize(PhantomGeometry{{g.ellipsoids[static_cast<std::size_t>(c - 1)]}}, spec.extents);
      Index full = 0, visible = 0;
      for (std::size_t i = 0; i < only.values.size(); ++i) {
        full += only.values[i] != 0;
        visible += labels.values[i] == c;
      }
      ok = visible > 0 && static_cast<double>(visible) >= spec.min_visible * static_cast<double>(full);
    }
    if (ok) return g;
  }
  throw ConfigError("phantom spec: no layout with every class at least " + detail::format_double(spec.min_visible) +
                    " visible after " + std::to_string(spec.max_attempts) + " attempts");
}

inline double class_intensity(int c, int num_classes) {
  return static_cast<double>(c) / static_cast<double>(num_classes - 1);
}

/// Deterministic phantom for `spec.seed`.
inline VolumeSample generate_phantom(const PhantomSpec& spec, std::string id = {}) {
  std::mt19937_64 rng(splitmix64(spec.seed));
  const PhantomGeometry g = sample_geometry(spec, rng);
  VolumeSample s;
  s.id = id.empty() ? "phantom_" + std::to_string(spec.seed) : std::move(id);
  s.spacing = spec.spacing;
  s.num_classes = spec.num_classes;
  s.labels = rasterize(g, spec.extents);
  s.image.resize(s.labels.values.size());
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    double v = class_intensity(s.labels.values[i], spec.num_classes);
    if (spec.noise_std > 0.0) v += noise(rng);
    s.image[i] = static_cast<float>(v);
  }
  return s;
}

/// The i-th sample of a dataset drawn from `spec`; its seed is derived from
/// spec.seed and i.
inline VolumeSample generate_phantom_at(const PhantomSpec& spec, std::uint64_t index) {
  PhantomSpec s = spec;
  s.seed = derive_seed(spec.seed, index);
  char name[32];
  std::snprintf(name, sizeof name, "phantom_%04llu", static_cast<unsigned long long>(index));
  return generate_phantom(s, name);
}

}  // namespace focalfuse::data
