// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file checkpoint.hpp
/// Checkpoint directory: encoder.dtns, decoder.dtns, block<i>.dtns (global
/// spectral weights) and a key=value manifest.

#include <filesystem>
#include <fstream>
#include <map>

#include "tpfno/fno/params.hpp"
#include "tpfno/tensor_io.hpp"

namespace tpfno {

struct CheckpointInfo {
  FnoConfig config;
  std::uint64_t seed = 0;
};

namespace detail {

template <class A>
std::string join_csv(const A& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

inline std::array<std::size_t, 4> parse_quad(const std::string& key, const std::string& v) {
  std::array<std::size_t, 4> out{};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto end = v.find(',', pos);
    if ((i < 3) == (end == std::string::npos)) throw ConfigError("manifest: '" + key + "' needs 4 values");
    out[i] = std::stoull(v.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

inline std::filesystem::path block_file(const std::filesystem::path& dir, std::size_t i) {
  return dir / ("block" + std::to_string(i) + ".dtns");
}

}  // namespace detail

/// Writes globally assembled parameters (see gather_params).
template <RealScalar R>
void save_checkpoint(const std::filesystem::path& dir, const CheckpointInfo& info, const FnoParams<R>& global) {
  std::filesystem::create_directories(dir);
  save_tensor(global.encoder, dir / "encoder.dtns");
  save_tensor(global.decoder, dir / "decoder.dtns");
  for (std::size_t i = 0; i < global.spectral.size(); ++i) save_tensor(global.spectral[i], detail::block_file(dir, i));
  const auto& c = info.config;
  std::ofstream m(dir / "manifest.txt", std::ios::binary);
  m << "extents=" << detail::join_csv(c.grid) << '\n'
    << "in_channels=" << c.in_channels << '\n'
    << "width=" << c.width << '\n'
    << "out_channels=" << c.out_channels << '\n'
    << "modes=" << detail::join_csv(c.modes) << '\n'
    << "blocks=" << c.num_blocks << '\n'
    << "activation=" << activation_name(c.activation) << '\n'
    << "dtype=" << (std::is_same_v<R, float> ? "f32" : "f64") << '\n'
    << "P=" << c.num_ranks << '\n'
    << "seed=" << info.seed << '\n';
  if (!m) throw StoreWriteError("cannot write " + (dir / "manifest.txt").string());
}

inline CheckpointInfo read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw ConfigError("no manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("manifest lacks '" + k + "'");
    return it->second;
  };
  CheckpointInfo info;
  auto& c = info.config;
  c.grid = detail::parse_quad("extents", get("extents"));
  c.modes = detail::parse_quad("modes", get("modes"));
  c.in_channels = std::stoull(get("in_channels"));
  c.width = std::stoull(get("width"));
  c.out_channels = std::stoull(get("out_channels"));
  c.num_blocks = std::stoull(get("blocks"));
  c.activation = parse_activation(get("activation"));
  c.num_ranks = std::stoull(get("P"));
  info.seed = std::stoull(get("seed"));
  c.validate();
  return info;
}

/// Loads global parameters; the manifest dtype must match R.
template <RealScalar R>
FnoParams<R> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info_out = nullptr) {
  const auto info = read_manifest(dir);
  FnoParams<R> p;
  p.encoder = load_tensor<R>(dir / "encoder.dtns");
  p.decoder = load_tensor<R>(dir / "decoder.dtns");
  for (std::size_t i = 0; i < info.config.num_blocks; ++i)
    p.spectral.push_back(load_tensor<std::complex<R>>(detail::block_file(dir, i)));
  FnoConfig global = info.config;
  global.num_ranks = 1;
  if (p.encoder.dims() != init_params<R>(global, 0).encoder.dims() ||
      p.spectral.front().dims() != global.spectral_weight_dims()) {
    throw ShapeMismatch("checkpoint tensors do not match its manifest");
  }
  if (info_out) *info_out = info;
  return p;
}

}  // namespace tpfno
