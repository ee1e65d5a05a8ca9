// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "focalfuse/arch/model.hpp"

namespace focalfuse::arch {

struct ParamEntry {
  std::string name;
  Shape shape;
  Index count = 0;
};

struct ModuleEntry {
  std::string name;  // first two components of the parameter names, e.g. "encoder.block1"
  Index count = 0;
};

struct ActivationEntry {
  std::string name;
  Shape shape;
};

struct ReceptiveFieldEntry {
  int stream = 1;
  std::vector<std::string> levels;  // "3", "6", ..., then "global" when enabled
};

/// Structural summary of a model instance.
struct ModelReport {
  ModelConfig config;
  std::array<Index, 3> input_extents{};
  std::vector<ParamEntry> params;
  std::vector<ModuleEntry> modules;
  Index total = 0;
  std::vector<ActivationEntry> activations;
  std::vector<ReceptiveFieldEntry> receptive_fields;

  [[nodiscard]] std::string to_text(bool per_tensor = false) const {
    std::ostringstream os;
    os << "variant " << to_string(config.variant) << ", base_channels " << config.base_channels;
    if (config.variant == Variant::focal_fuse) {
      os << ", focal_levels " << config.focal_levels << ", global_context " << (config.global_context ? "on" : "off");
    } else {
      os << ", dense_layers_per_block " << config.dense_layers_per_block;
    }
    os << ", num_classes " << config.num_classes << ", input_channels " << config.input_channels << '\n';

    std::size_t w = 12;
    for (const auto& m : modules) w = std::max(w, m.name.size());
    if (per_tensor) {
      for (const auto& p : params) w = std::max(w, p.name.size());
    }
    os << "\nparameters\n";
    const auto row = [&](const std::string& name, const std::string& extra, Index count) {
      os << "  " << std::left << std::setw(static_cast<int>(w)) << name << std::right << ' ' << std::setw(24) << extra
         << ' ' << std::setw(10) << count << '\n';
    };
    if (per_tensor) {
      for (const auto& p : params) row(p.name, p.shape.to_string(), p.count);
    } else {
      for (const auto& m : modules) row(m.name, "", m.count);
    }
    row("total", "", total);

    os << "\nactivations (input " << input_extents[0] << 'x' << input_extents[1] << 'x' << input_extents[2] << ")\n";
    std::size_t aw = 4;
    for (const auto& a : activations) aw = std::max(aw, a.name.size());
    for (const auto& a : activations) {
      os << "  " << std::left << std::setw(static_cast<int>(aw)) << a.name << std::right << ' ' << a.shape.to_string()
         << '\n';
    }

    os << "\nreceptive field per "
       << (config.variant == Variant::focal_fuse ? "focal level" : "dense layer") << " (voxels at stream resolution)\n";
    for (const auto& r : receptive_fields) {
      os << "  stream " << r.stream << ':';
      for (const auto& l : r.levels) os << ' ' << l;
      os << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline std::string module_of(const std::string& param) {
  const auto a = param.find('.');
  if (a == std::string::npos) return param;
  const auto b = param.find('.', a + 1);
  return b == std::string::npos ? param : param.substr(0, b);
}

}  // namespace detail

/// Parameter counts (from an instantiated store), activation shapes traced
/// from the schedule for a single-volume batch, and nominal receptive fields
/// (each depthwise 3^3 step adds 3).
inline ModelReport describe(const ModelConfig& cfg, std::array<Index, 3> extents = {32, 32, 32}) {
  cfg.validate();
  cfg.validate_extents(extents);
  ModelReport r;
  r.config = cfg;
  r.input_extents = extents;
  const Model<float> model(cfg, 0);
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store.tensor(i);
    r.params.push_back({store.names()[i], t.shape(), t.numel()});
    r.total += t.numel();
    const std::string mod = detail::module_of(store.names()[i]);
    // A stream's gate and projections are created after the levels but share its row.
    auto it = std::find_if(r.modules.begin(), r.modules.end(), [&](const auto& m) { return m.name == mod; });
    if (it == r.modules.end()) it = r.modules.insert(r.modules.end(), {mod, 0});
    it->count += t.numel();
  }

  const auto at = [&](int a) {
    const Index f = Index{1} << (a - 1);
    return std::array<Index, 3>{extents[0] / f, extents[1] / f, extents[2] / f};
  };
  r.activations.push_back({"input", make_shape5(1, cfg.input_channels, extents)});
  for (int a = 1; a <= kNumScales + 1; ++a) {
    r.activations.push_back({"I" + std::to_string(a), make_shape5(1, cfg.channels(a), at(a))});
  }
  if (cfg.variant == Variant::focal_fuse) {
    for (int a = 1; a <= kNumScales; ++a) {
      r.activations.push_back({"G" + std::to_string(a), make_shape5(1, cfg.focal_levels + (cfg.global_context ? 1 : 0), at(a))});
    }
  }
  for (int a = 1; a <= kNumScales; ++a) r.activations.push_back({"Y" + std::to_string(a), make_shape5(1, cfg.channels(a), at(a))});
  for (int a = kNumScales; a >= 1; --a) r.activations.push_back({"D" + std::to_string(a), make_shape5(1, cfg.channels(a), at(a))});
  r.activations.push_back({"logits", make_shape5(1, cfg.num_classes, extents)});

  const Index steps = cfg.variant == Variant::focal_fuse ? cfg.focal_levels : cfg.dense_layers_per_block;
  for (int a = 1; a <= kNumScales; ++a) {
    ReceptiveFieldEntry e;
    e.stream = a;
    for (Index l = 1; l <= steps; ++l) e.levels.push_back(std::to_string(3 * l));
    if (cfg.variant == Variant::focal_fuse && cfg.global_context) e.levels.emplace_back("global");
    r.receptive_fields.push_back(e);
  }
  return r;
}

}  // namespace focalfuse::arch
