// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "focalfuse/tensor/errors.hpp"
#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse::arch {

enum class Variant { focal_fuse, msf3d };

inline std::string to_string(Variant v) { return v == Variant::focal_fuse ? "focal_fuse" : "msf3d"; }

inline Variant parse_variant(std::string_view s) {
  if (s == "focal_fuse") return Variant::focal_fuse;
  if (s == "msf3d") return Variant::msf3d;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected focal_fuse or msf3d)");
}

inline constexpr int kNumScales = 4;

/// Declarative description of one architecture instance.
///
/// Text form is UTF-8 `key = value` lines; `#` starts a comment. Keys:
///   variant                  focal_fuse | msf3d
///   base_channels            width of encoder block 1 (doubles per block)
///   num_scales               must be 4
///   focal_levels             N, focal_fuse only
///   dense_layers_per_block   L, msf3d only
///   num_classes              segmentation classes including background
///   input_channels           image channels
///   global_context           true | false (focal_fuse global level)
struct ModelConfig {
  Variant variant = Variant::focal_fuse;
  Index base_channels = 16;
  Index num_scales = kNumScales;
  Index focal_levels = 2;
  Index dense_layers_per_block = 3;
  Index num_classes = 6;
  Index input_channels = 1;
  bool global_context = true;

  /// Width of encoder block `block` (1-based, 1..5).
  [[nodiscard]] Index channels(int block) const { return base_channels << (block - 1); }

  void validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (num_scales != kNumScales) throw ConfigError("num_scales must be 4");
    if (focal_levels < 1) throw ConfigError("focal_levels must be positive");
    if (dense_layers_per_block < 1) throw ConfigError("dense_layers_per_block must be positive");
    if (num_classes < 1) throw ConfigError("num_classes must be positive");
    if (input_channels < 1) throw ConfigError("input_channels must be positive");
  }

  /// Input extents must survive four exact halvings.
  void validate_extents(const std::array<Index, 3>& extents) const {
    for (Index e : extents) {
      if (e < 16 || e % 16 != 0) {
        throw ConfigError("input spatial extents must be positive multiples of 16, got " + std::to_string(extents[0]) +
                          "x" + std::to_string(extents[1]) + "x" + std::to_string(extents[2]));
      }
    }
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << "variant = " << to_string(variant) << '\n'
       << "base_channels = " << base_channels << '\n'
       << "num_scales = " << num_scales << '\n'
       << "focal_levels = " << focal_levels << '\n'
       << "dense_layers_per_block = " << dense_layers_per_block << '\n'
       << "num_classes = " << num_classes << '\n'
       << "input_channels = " << input_channels << '\n'
       << "global_context = " << (global_context ? "true" : "false") << '\n';
    return os.str();
  }

  static ModelConfig parse(std::string_view text) {
    ModelConfig cfg;
    std::map<std::string, std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (seen.contains(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      seen[key] = value;
      cfg.set(key, value, lineno);
    }
    cfg.validate();
    return cfg;
  }

  static ModelConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write config file '" + path + "'");
    f << to_text();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

 private:
  void set(const std::string& key, const std::string& value, int lineno) {
    const auto as_int = [&]() {
      Index v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size()) {
        throw ConfigError("config line " + std::to_string(lineno) + ": '" + key + "' expects an integer, got '" +
                          value + "'");
      }
      return v;
    };
    if (key == "variant") {
      variant = parse_variant(value);
    } else if (key == "base_channels") {
      base_channels = as_int();
    } else if (key == "num_scales") {
      num_scales = as_int();
    } else if (key == "focal_levels") {
      focal_levels = as_int();
    } else if (key == "dense_layers_per_block") {
      dense_layers_per_block = as_int();
    } else if (key == "num_classes") {
      num_classes = as_int();
    } else if (key == "input_channels") {
      input_channels = as_int();
    } else if (key == "global_context") {
      if (value != "true" && value != "false") {
        throw ConfigError("config line " + std::to_string(lineno) + ": global_context expects true or false");
      }
      global_context = value == "true";
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
};

}  // namespace focalfuse::arch
