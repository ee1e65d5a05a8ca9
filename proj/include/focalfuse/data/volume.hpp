// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "focalfuse/data/digest.hpp"
#include "focalfuse/metrics/metrics.hpp"
#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse::data {

using metrics::Extents;
using metrics::LabelVolume;
using metrics::Spacing;

/// Image volume with its label volume. `image` may be empty for label-only
/// volumes (predictions).
struct VolumeSample {
  std::string id;
  Spacing spacing{1.0, 1.0, 1.0};
  int num_classes = 2;
  std::vector<float> image;
  LabelVolume labels;

  [[nodiscard]] const Extents& extents() const { return labels.extents; }
  [[nodiscard]] bool has_image() const { return !image.empty(); }

  /// Checks label range, image size and finiteness, and optionally that every
  /// extent is a multiple of 16.
  void validate(bool require_divisible = true) const {
    if (num_classes < 1 || num_classes > 256) throw DataError(id + ": num_classes out of range");
    if (id.empty() || id.find_first_of("\r\n") != std::string::npos) throw DataError("volume id must be one non-empty line");
    for (Index e : extents()) {
      if (e < 1) throw DataError(id + ": extents must be positive");
      if (require_divisible && e % 16 != 0) throw DataError(id + ": extents must be multiples of 16");
    }
    if (has_image() && static_cast<Index>(image.size()) != labels.numel()) {
      throw DataError(id + ": image size does not match extents");
    }
    for (float v : image) {
      if (!std::isfinite(v)) throw DataError(id + ": non-finite image value");
    }
    for (auto l : labels.values) {
      if (l >= num_classes) throw DataError(id + ": label " + std::to_string(l) + " outside [0, num_classes)");
    }
    for (double s : spacing) {
      if (!(s > 0.0) || !std::isfinite(s)) throw DataError(id + ": spacing must be positive");
    }
  }

  /// Image as a [1, 1, W, H, Z] tensor.
  template <class T>
  [[nodiscard]] Tensor<T> image_tensor() const {
    if (!has_image()) throw DataError(id + ": volume has no image");
    std::vector<T> v(image.begin(), image.end());
    return Tensor<T>(make_shape5(1, 1, extents()), std::move(v));
  }
};

namespace detail {

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

template <class N>
N parse_number(const std::string& s, const std::string& key) {
  N v{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw FormatError("volume header: bad value '" + s + "' for " + key);
  return v;
}

template <class N>
std::array<N, 3> parse_triple(const std::string& s, const std::string& key) {
  std::istringstream in(s);
  std::array<std::string, 3> parts;
  std::string extra;
  if (!(in >> parts[0] >> parts[1] >> parts[2]) || (in >> extra)) {
    throw FormatError("volume header: " + key + " needs three values");
  }
  return {parse_number<N>(parts[0], key), parse_number<N>(parts[1], key), parse_number<N>(parts[2], key)};
}

inline std::vector<std::byte> float_bytes_le(const std::vector<float>& v) {
  std::vector<std::byte> out(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(v[i]);
    for (int k = 0; k < 4; ++k) out[i * 4 + k] = static_cast<std::byte>((u >> (8 * k)) & 0xFF);
  }
  return out;
}

inline std::vector<float> floats_from_le(const std::byte* p, std::size_t n) {
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(p[i * 4 + k]) << (8 * k);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace detail

inline constexpr std::string_view kVolumeMagic = "MVOL1\n";

/// Serialized MVOL1 bytes: magic, `key: value` header lines, a blank line, then
/// the little-endian f32 image (if any) followed by u8 labels.
inline std::string encode_volume(const VolumeSample& s) {
  s.validate(false);
  const auto img = detail::float_bytes_le(s.image);
  const auto& lab = s.labels.values;
  Sha256 h;
  h.update(img);
  h.update(std::as_bytes(std::span(lab)));
  const auto& e = s.extents();
  std::ostringstream os;
  os << kVolumeMagic << "id: " << s.id << '\n'
     << "extents: " << e[0] << ' ' << e[1] << ' ' << e[2] << '\n'
     << "spacing: " << detail::format_double(s.spacing[0]) << ' ' << detail::format_double(s.spacing[1]) << ' '
     << detail::format_double(s.spacing[2]) << '\n'
     << "num_classes: " << s.num_classes << '\n'
     << "image_dtype: f32le\n"
     << "label_dtype: u8\n"
     << "image_bytes: " << img.size() << '\n'
     << "label_bytes: " << lab.size() << '\n'
     << "digest: sha256:" << h.hex() << "\n\n";
  std::string out = os.str();
  out.append(reinterpret_cast<const char*>(img.data()), img.size());
  out.append(reinterpret_cast<const char*>(lab.data()), lab.size());
  return out;
}

inline VolumeSample decode_volume(std::string_view bytes, const std::string& source = "volume") {
  if (!bytes.starts_with(kVolumeMagic)) throw FormatError(source + ": bad magic (not an MVOL1 file)");
  std::size_t pos = kVolumeMagic.size();
  std::map<std::string, std::string> header;
  for (;;) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw FormatError(source + ": unterminated header");
    const std::string line(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) break;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw FormatError(source + ": malformed header line '" + line + "'");
    const std::string key = line.substr(0, colon);
    if (!header.emplace(key, line.substr(colon + 2)).second) throw FormatError(source + ": duplicate key " + key);
  }
  const auto get = [&](const char* key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) throw FormatError(source + ": header is missing '" + key + "'");
    return it->second;
  };
  if (header.size() != 9) throw FormatError(source + ": unexpected header keys");
  if (get("image_dtype") != "f32le" || get("label_dtype") != "u8") throw FormatError(source + ": unsupported dtype");

  VolumeSample s;
  s.id = get("id");
  const auto e = detail::parse_triple<Index>(get("extents"), "extents");
  s.spacing = detail::parse_triple<double>(get("spacing"), "spacing");
  s.num_classes = detail::parse_number<int>(get("num_classes"), "num_classes");
  const auto image_bytes = detail::parse_number<std::size_t>(get("image_bytes"), "image_bytes");
  const auto label_bytes = detail::parse_number<std::size_t>(get("label_bytes"), "label_bytes");
  for (Index x : e) {
    if (x < 1) throw FormatError(source + ": extents must be positive");
  }
  const auto n = static_cast<std::size_t>(e[0] * e[1] * e[2]);
  if (label_bytes != n || (image_bytes != 0 && image_bytes != 4 * n)) {
    throw FormatError(source + ": header extents do not match the declared payload sizes");
  }
  const std::string_view payload = bytes.substr(pos);
  if (payload.size() < image_bytes + label_bytes) {
    throw FormatError(source + ": truncated payload (" + std::to_string(payload.size()) + " of " +
                      std::to_string(image_bytes + label_bytes) + " bytes)");
  }
  if (payload.size() > image_bytes + label_bytes) throw FormatError(source + ": trailing bytes after payload");
  const std::string& digest = get("digest");
  const std::string actual = "sha256:" + sha256_hex(std::as_bytes(std::span(payload.data(), payload.size())));
  if (digest != actual) throw FormatError(source + ": digest mismatch");

  const auto* p = reinterpret_cast<const std::byte*>(payload.data());
  s.image = detail::floats_from_le(p, image_bytes / 4);
  std::vector<std::uint8_t> lab(label_bytes);
  std::memcpy(lab.data(), p + image_bytes, label_bytes);
  s.labels = LabelVolume(e, std::move(lab));
  try {
    s.validate(false);
  } catch (const DataError& err) {
    throw FormatError(source + ": " + err.what());
  }
  return s;
}

inline void write_volume(const VolumeSample& s, const std::filesystem::path& path) {
  detail::write_file(path, encode_volume(s));
}

inline VolumeSample read_volume(const std::filesystem::path& path) {
  return decode_volume(detail::read_file(path), path.string());
}

}  // namespace focalfuse::data
