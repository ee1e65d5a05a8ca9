// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "focalfuse/tensor/errors.hpp"
#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse::metrics {

using Extents = std::array<Index, 3>;
using Spacing = std::array<double, 3>;

/// Integer label volume in (W, H, Z) raster order, Z fastest.
struct LabelVolume {
  Extents extents{1, 1, 1};
  std::vector<std::uint8_t> values;

  LabelVolume() : values(1, 0) {}
  LabelVolume(Extents e, std::vector<std::uint8_t> v) : extents(e), values(std::move(v)) {
    if (static_cast<Index>(values.size()) != numel()) {
      throw DimensionError("label volume has " + std::to_string(values.size()) + " values for extents " +
                           std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]));
    }
  }

  [[nodiscard]] Index numel() const { return extents[0] * extents[1] * extents[2]; }
  [[nodiscard]] std::uint8_t at(Index w, Index h, Index z) const {
    return values[static_cast<std::size_t>((w * extents[1] + h) * extents[2] + z)];
  }
  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

/// Binary mask of one class.
inline std::vector<std::uint8_t> class_mask(const LabelVolume& v, int class_id) {
  std::vector<std::uint8_t> m(v.values.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = v.values[i] == class_id ? 1 : 0;
  return m;
}

namespace detail {

inline void require_same_extents(const Extents& a, const Extents& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": volumes have different extents");
}

}  // namespace detail

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty, 0 when exactly one is.
inline double dice_score(const LabelVolume& pred, const LabelVolume& truth, int class_id) {
  detail::require_same_extents(pred.extents, truth.extents, "dice_score");
  std::int64_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool pa = pred.values[i] == class_id;
    const bool tb = truth.values[i] == class_id;
    a += pa;
    b += tb;
    both += pa && tb;
  }
  if (a == 0 && b == 0) return 1.0;
  if (a == 0 || b == 0) return 0.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

struct Voxel {
  Index w, h, z;
  friend bool operator==(const Voxel&, const Voxel&) = default;
};

/// Foreground voxels with at least one six-connected background neighbour,
/// treating everything outside the volume as background. Raster order.
inline std::vector<Voxel> surface_voxels(const std::vector<std::uint8_t>& mask, const Extents& e) {
  if (static_cast<Index>(mask.size()) != e[0] * e[1] * e[2]) throw DimensionError("surface_voxels: mask size");
  const auto fg = [&](Index w, Index h, Index z) {
    if (w < 0 || h < 0 || z < 0 || w >= e[0] || h >= e[1] || z >= e[2]) return false;
    return mask[static_cast<std::size_t>((w * e[1] + h) * e[2] + z)] != 0;
  };
  std::vector<Voxel> out;
  for (Index w = 0; w < e[0]; ++w)
    for (Index h = 0; h < e[1]; ++h)
      for (Index z = 0; z < e[2]; ++z) {
        if (!fg(w, h, z)) continue;
        if (!fg(w - 1, h, z) || !fg(w + 1, h, z) || !fg(w, h - 1, z) || !fg(w, h + 1, z) || !fg(w, h, z - 1) ||
            !fg(w, h, z + 1)) {
          out.push_back({w, h, z});
        }
      }
  return out;
}

inline double squared_distance(const Voxel& a, const Voxel& b, const Spacing& sp) {
  const double dw = static_cast<double>(a.w - b.w) * sp[0];
  const double dh = static_cast<double>(a.h - b.h) * sp[1];
  const double dz = static_cast<double>(a.z - b.z) * sp[2];
  return dw * dw + dh * dh + dz * dz;
}

/// Exact nearest-point queries against a fixed voxel set. Points are sorted by
/// the first axis and the scan stops once that axis alone exceeds the best hit.
class NearestSurface {
 public:
  NearestSurface(std::vector<Voxel> points, const Spacing& spacing) : pts_(std::move(points)), sp_(spacing) {
    std::stable_sort(pts_.begin(), pts_.end(), [](const Voxel& a, const Voxel& b) { return a.w < b.w; });
  }

  [[nodiscard]] double distance(const Voxel& q) const {
    double best = std::numeric_limits<double>::infinity();
    const auto mid = std::lower_bound(pts_.begin(), pts_.end(), q.w, [](const Voxel& v, Index w) { return v.w < w; });
    for (auto it = mid; it != pts_.end(); ++it) {
      const double dw = static_cast<double>(it->w - q.w) * sp_[0];
      if (dw * dw > best) break;
      best = std::min(best, squared_distance(q, *it, sp_));
    }
    for (auto it = mid; it != pts_.begin();) {
      --it;
      const double dw = static_cast<double>(q.w - it->w) * sp_[0];
      if (dw * dw > best) break;
      best = std::min(best, squared_distance(q, *it, sp_));
    }
    return std::sqrt(best);
  }

 private:
  std::vector<Voxel> pts_;
  Spacing sp_;
};

/// Nearest-opposite-surface distance of every surface voxel of `from`.
inline std::vector<double> directed_surface_distances(const std::vector<Voxel>& from, const std::vector<Voxel>& to,
                                                      const Spacing& spacing) {
  NearestSurface index(to, spacing);
  std::vector<double> d;
  d.reserve(from.size());
  for (const Voxel& v : from) d.push_back(index.distance(v));
  return d;
}

enum class HausdorffMode { max, percentile95 };

namespace detail {

struct SurfacePair {
  std::vector<double> a_to_b;
  std::vector<double> b_to_a;
};

inline SurfacePair surface_pair(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                const Extents& e, const Spacing& spacing, const char* op) {
  const auto sa = surface_voxels(a, e);
  const auto sb = surface_voxels(b, e);
  if (sa.empty() || sb.empty()) throw UndefinedMetric(std::string(op) + ": empty mask");
  return {directed_surface_distances(sa, sb, spacing), directed_surface_distances(sb, sa, spacing)};
}

/// Nearest-rank percentile.
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace detail

/// Symmetric Hausdorff distance between the surfaces of two binary masks, in
/// physical units. percentile95 takes the larger of the two directed 95th
/// percentiles instead of the maxima.
inline double hausdorff_distance(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                 const Extents& e, const Spacing& spacing, HausdorffMode mode = HausdorffMode::max) {
  const auto p = detail::surface_pair(a, b, e, spacing, "hausdorff_distance");
  if (mode == HausdorffMode::percentile95) {
    return std::max(detail::percentile(p.a_to_b, 95.0), detail::percentile(p.b_to_a, 95.0));
  }
  return std::max(*std::max_element(p.a_to_b.begin(), p.a_to_b.end()),
                  *std::max_element(p.b_to_a.begin(), p.b_to_a.end()));
}

/// Mean of the nearest-opposite-surface distances pooled over both surfaces.
inline double average_surface_distance(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                       const Extents& e, const Spacing& spacing) {
  const auto p = detail::surface_pair(a, b, e, spacing, "average_surface_distance");
  // Per-direction sums keep the result exactly symmetric in (a, b).
  double sa = 0.0, sb = 0.0;
  for (double d : p.a_to_b) sa += d;
  for (double d : p.b_to_a) sb += d;
  return (sa + sb) / static_cast<double>(p.a_to_b.size() + p.b_to_a.size());
}

struct ClassMetrics {
  int class_id = 0;
  double dsc = 0.0;
  std::optional<double> hd;   // absent when either mask is empty
  std::optional<double> asd;
  bool counted = false;       // present in prediction or truth
};

/// Per-class metrics of one volume (or an aggregate) plus foreground means.
struct MetricsReport {
  std::string id;
  std::vector<ClassMetrics> per_class;  // foreground classes 1..C-1
  std::optional<double> mean_dsc;
  std::optional<double> mean_hd;
  std::optional<double> mean_asd;

  /// One row per class plus a mean row: id,class,dsc,hd,asd. Absent values are empty.
  [[nodiscard]] std::string to_csv(bool header = true) const;
  /// Text table: id, mean DSC, mean HD, mean ASD, then DSC per class.
  [[nodiscard]] std::string to_text() const;
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline void finish_means(MetricsReport& r) {
  std::vector<double> dsc, hd, asd;
  for (const auto& c : r.per_class) {
    if (!c.counted) continue;
    dsc.push_back(c.dsc);
    if (c.hd) hd.push_back(*c.hd);
    if (c.asd) asd.push_back(*c.asd);
  }
  r.mean_dsc = mean_of(dsc);
  r.mean_hd = mean_of(hd);
  r.mean_asd = mean_of(asd);
}

inline std::string fmt(const std::optional<double>& v, int precision = 4) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

}  // namespace detail

/// Metrics for classes 1..num_classes-1. Classes absent from both volumes are
/// reported but left out of the means; HD/ASD means cover classes where both
/// masks are non-empty.
inline MetricsReport evaluate_volume(const LabelVolume& pred, const LabelVolume& truth, const Spacing& spacing,
                                     int num_classes, std::string id = {}) {
  detail::require_same_extents(pred.extents, truth.extents, "evaluate_volume");
  MetricsReport r;
  r.id = std::move(id);
  for (int c = 1; c < num_classes; ++c) {
    ClassMetrics m;
    m.class_id = c;
    const auto a = class_mask(pred, c);
    const auto b = class_mask(truth, c);
    const bool any_a = std::find(a.begin(), a.end(), 1) != a.end();
    const bool any_b = std::find(b.begin(), b.end(), 1) != b.end();
    m.counted = any_a || any_b;
    m.dsc = dice_score(pred, truth, c);
    if (any_a && any_b) {
      const auto p = detail::surface_pair(a, b, pred.extents, spacing, "evaluate_volume");
      double sa = 0.0, sb = 0.0, mx = 0.0;
      for (double d : p.a_to_b) sa += d, mx = std::max(mx, d);
      for (double d : p.b_to_a) sb += d, mx = std::max(mx, d);
      m.hd = mx;
      m.asd = (sa + sb) / static_cast<double>(p.a_to_b.size() + p.b_to_a.size());
    }
    r.per_class.push_back(m);
  }
  detail::finish_means(r);
  return r;
}

/// Aggregate over volumes: every value is the mean of the per-volume values
/// that are defined.
inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports, std::string id = "mean") {
  MetricsReport r;
  r.id = std::move(id);
  if (reports.empty()) return r;
  const std::size_t nc = reports.front().per_class.size();
  for (const auto& rep : reports) {
    if (rep.per_class.size() != nc) throw DimensionError("aggregate_reports: reports differ in class count");
  }
  for (std::size_t k = 0; k < nc; ++k) {
    std::vector<double> dsc, hd, asd;
    for (const auto& rep : reports) {
      const auto& c = rep.per_class[k];
      if (!c.counted) continue;
      dsc.push_back(c.dsc);
      if (c.hd) hd.push_back(*c.hd);
      if (c.asd) asd.push_back(*c.asd);
    }
    ClassMetrics m;
    m.class_id = reports.front().per_class[k].class_id;
    m.counted = !dsc.empty();
    m.dsc = detail::mean_of(dsc).value_or(1.0);
    m.hd = detail::mean_of(hd);
    m.asd = detail::mean_of(asd);
    r.per_class.push_back(m);
  }
  std::vector<double> dsc, hd, asd;
  for (const auto& rep : reports) {
    if (rep.mean_dsc) dsc.push_back(*rep.mean_dsc);
    if (rep.mean_hd) hd.push_back(*rep.mean_hd);
    if (rep.mean_asd) asd.push_back(*rep.mean_asd);
  }
  r.mean_dsc = detail::mean_of(dsc);
  r.mean_hd = detail::mean_of(hd);
  r.mean_asd = detail::mean_of(asd);
  return r;
}

inline std::string MetricsReport::to_csv(bool header) const {
  std::ostringstream os;
  if (header) os << "id,class,dsc,hd,asd\n";
  for (const auto& c : per_class) {
    os << id << ',' << c.class_id << ',' << (c.counted ? detail::fmt(c.dsc, 6) : "") << ','
       << detail::fmt(c.hd, 6) << ',' << detail::fmt(c.asd, 6) << '\n';
  }
  os << id << ",mean," << detail::fmt(mean_dsc, 6) << ',' << detail::fmt(mean_hd, 6) << ','
     << detail::fmt(mean_asd, 6) << '\n';
  return os.str();
}

/// Plain-text table over several reports, one row each.
inline std::string format_table(const std::vector<MetricsReport>& rows) {
  std::size_t nc = 0;
  std::size_t idw = 6;
  for (const auto& r : rows) {
    nc = std::max(nc, r.per_class.size());
    idw = std::max(idw, r.id.size());
  }
  constexpr int kCol = 10;
  std::ostringstream os;
  const auto cell = [&](const std::string& s) { os << ' ' << std::setw(kCol) << s; };
  os << std::left << std::setw(static_cast<int>(idw)) << "volume" << std::right;
  cell("mean DSC");
  cell("mean HD");
  cell("mean ASD");
  for (std::size_t k = 0; k < nc; ++k) cell("DSC c" + std::to_string(k + 1));
  os << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(idw)) << r.id << std::right;
    const auto show = [](const std::optional<double>& v) { return v ? detail::fmt(v) : std::string("-"); };
    cell(show(r.mean_dsc));
    cell(show(r.mean_hd));
    cell(show(r.mean_asd));
    for (std::size_t k = 0; k < nc; ++k) {
      if (k < r.per_class.size() && r.per_class[k].counted) {
        cell(detail::fmt(r.per_class[k].dsc));
      } else {
        cell("-");
      }
    }
    os << '\n';
  }
  return os.str();
}

inline std::string MetricsReport::to_text() const { return format_table({*this}); }

}  // namespace focalfuse::metrics
