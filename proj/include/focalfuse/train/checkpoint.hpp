// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focalfuse/arch/model.hpp"
#include "focalfuse/data/digest.hpp"
#include "focalfuse/data/volume.hpp"
#include "focalfuse/train/adam.hpp"

namespace focalfuse::train {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "FFCKPT";

/// Decoded checkpoint: config, parameters in store order, Adam state.
struct Checkpoint {
  arch::ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<float>> params;
  OptimState<float> optim;
};

namespace detail {

inline void append_floats(std::string& out, std::span<const float> v) {
  for (float f : v) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((u >> (8 * k)) & 0xFF));
  }
}

}  // namespace detail

/// File layout: `FFCKPT <version> <manifest bytes>\n`, a JSON manifest
/// (config text, Adam hyperparameters and step, tensor index with shapes and
/// payload offsets, SHA-256 of the payload), then little-endian f32 payload.
/// Tensors are the parameters followed by `adam.m.<name>` and `adam.v.<name>`.
inline std::string encode_checkpoint(const arch::ParamStore<float>& params, const OptimState<float>& optim,
                                     const arch::ModelConfig& config) {
  if (optim.m.size() != params.size() || optim.v.size() != params.size()) {
    throw ConfigError("checkpoint: optimizer state does not match the parameter store");
  }
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  const auto add = [&](const std::string& name, const Tensor<float>& t) {
    index.push_back({{"name", name}, {"shape", t.shape().dims()}, {"offset", payload.size()}});
    detail::append_floats(payload, t.data());
  };
  for (std::size_t i = 0; i < params.size(); ++i) add(params.names()[i], params.tensor(i));
  for (std::size_t i = 0; i < params.size(); ++i) add("adam.m." + params.names()[i], optim.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) add("adam.v." + params.names()[i], optim.v[i]);

  nlohmann::json manifest = {
      {"format_version", kCheckpointVersion},
      {"config", config.to_text()},
      {"adam", {{"step", optim.step}, {"beta1", optim.hyper.beta1}, {"beta2", optim.hyper.beta2}, {"eps", optim.hyper.eps}}},
      {"num_params", params.size()},
      {"tensors", index},
      {"payload_bytes", payload.size()},
      {"digest", "sha256:" + data::sha256_hex(std::as_bytes(std::span(payload.data(), payload.size())))},
  };
  const std::string m = manifest.dump(1);
  std::string out = std::string(kCheckpointMagic) + ' ' + std::to_string(kCheckpointVersion) + ' ' +
                    std::to_string(m.size()) + '\n';
  out += m;
  out += payload;
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos || !bytes.starts_with(std::string(kCheckpointMagic) + ' ')) {
    throw FormatError(source + ": not a checkpoint file");
  }
  std::istringstream first{std::string(bytes.substr(0, nl))};
  std::string magic;
  long long version = 0;
  long long mbytes = -1;
  if (!(first >> magic >> version >> mbytes) || mbytes < 0) throw FormatError(source + ": malformed first line");
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t mstart = nl + 1;
  if (bytes.size() < mstart + static_cast<std::size_t>(mbytes)) throw FormatError(source + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(mstart, static_cast<std::size_t>(mbytes)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": manifest is not valid JSON: " + e.what());
  }
  const std::string_view payload = bytes.substr(mstart + static_cast<std::size_t>(mbytes));
  Checkpoint ck;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion) throw FormatError(source + ": version mismatch");
    const auto declared = manifest.at("payload_bytes").get<std::size_t>();
    if (payload.size() < declared) {
      throw FormatError(source + ": truncated payload (" + std::to_string(payload.size()) + " of " +
                        std::to_string(declared) + " bytes)");
    }
    if (payload.size() > declared) throw FormatError(source + ": trailing bytes after payload");
    const std::string digest = "sha256:" + data::sha256_hex(std::as_bytes(std::span(payload.data(), payload.size())));
    if (manifest.at("digest").get<std::string>() != digest) throw FormatError(source + ": digest mismatch");

    ck.config = arch::ModelConfig::parse(manifest.at("config").get<std::string>());
    const auto& adam = manifest.at("adam");
    ck.optim.step = adam.at("step").get<std::int64_t>();
    ck.optim.hyper = {adam.at("beta1").get<double>(), adam.at("beta2").get<double>(), adam.at("eps").get<double>()};
    const auto n = manifest.at("num_params").get<std::size_t>();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != 3 * n) throw FormatError(source + ": tensor index has the wrong length");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& e = tensors[i];
      const auto name = e.at("name").get<std::string>();
      Shape shape(e.at("shape").get<std::vector<Index>>());
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = static_cast<std::size_t>(shape.numel()) * 4;
      if (offset + nbytes > payload.size()) throw FormatError(source + ": tensor '" + name + "' exceeds the payload");
      Tensor<float> t(shape, data::detail::floats_from_le(reinterpret_cast<const std::byte*>(payload.data()) + offset,
                                                          static_cast<std::size_t>(shape.numel())));
      if (i < n) {
        t.set_requires_grad(true);
        ck.names.push_back(name);
        ck.params.push_back(t);
      } else {
        const std::string prefix = i < 2 * n ? "adam.m." : "adam.v.";
        if (name != prefix + ck.names[i % n]) throw FormatError(source + ": unexpected tensor '" + name + "'");
        (i < 2 * n ? ck.optim.m : ck.optim.v).push_back(t);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": malformed manifest: " + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(source + ": " + e.what());
  }
  return ck;
}

/// Writes via a temporary file and rename so a crash never leaves a partial checkpoint.
inline void save_checkpoint(const arch::ParamStore<float>& params, const OptimState<float>& optim,
                            const arch::ModelConfig& config, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  data::detail::write_file(tmp, encode_checkpoint(params, optim, config));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(data::detail::read_file(path), path.string());
}

/// Copies checkpoint tensors into `params` (and `optim` if given). The
/// checkpoint must come from the same config and parameter layout.
inline void restore(const Checkpoint& ck, const arch::ModelConfig& expected, arch::ParamStore<float>& params,
                    OptimState<float>* optim = nullptr) {
  if (!(ck.config == expected)) {
    throw ConfigError("checkpoint config (variant " + arch::to_string(ck.config.variant) +
                      ") does not match the requested config (variant " + arch::to_string(expected.variant) + ")");
  }
  if (ck.names != params.names()) throw ConfigError("checkpoint parameter names do not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ck.params[i].shape() != params.tensor(i).shape()) {
      throw ConfigError("checkpoint parameter '" + ck.names[i] + "' has shape " + ck.params[i].shape().to_string());
    }
    const auto src = ck.params[i].data();
    std::copy(src.begin(), src.end(), params.tensor(i).mutable_data().begin());
  }
  if (optim != nullptr) {
    optim->hyper = ck.optim.hyper;
    optim->step = ck.optim.step;
    optim->m.clear();
    optim->v.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      optim->m.push_back(ck.optim.m[i].clone());
      optim->v.push_back(ck.optim.v[i].clone());
    }
  }
}

/// Fresh model carrying the checkpoint's parameters.
inline arch::Model<float> model_from_checkpoint(const Checkpoint& ck) {
  arch::Model<float> model(ck.config, 0);
  restore(ck, ck.config, model.params());
  return model;
}

}  // namespace focalfuse::train
