// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <random>

#include "tpfno/fno/config.hpp"

namespace tpfno {

/// Encoder/decoder channel-mixing weights (replicated) plus one spectral
/// weight tensor per block, stored as this rank's ky shard.
template <RealScalar R>
struct FnoParams {
  Tensor<R> encoder;                               ///< [c_in, width]
  Tensor<R> decoder;                               ///< [width, c_out]
  std::vector<Tensor<std::complex<R>>> spectral;   ///< [width, width, kx, ky_local, kz, kt]

  friend bool operator==(const FnoParams&, const FnoParams&) = default;
};

/// Uniform [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

namespace detail {

template <RealScalar R>
Tensor<R> glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<R> w({{DimLabel::c, fan_in}, {DimLabel::c, fan_out}});
  for (auto& v : w.data()) v = static_cast<R>((2.0 * uniform01(rng) - 1.0) * limit);
  return w;
}

}  // namespace detail

/// Slice of a global spectral weight tensor along ky for `rank`.
template <Scalar T>
Tensor<T> spectral_shard(const Tensor<T>& global, const Partition& ky, std::size_t rank) {
  Box frame;
  for (const auto& d : global.dims()) frame.ranges.push_back({0, d.extent});
  return extract_block(global, frame, slab_box(ky, global.dims(), rank));
}

/// Deterministic parameters for `rank`. The global weights are drawn in a
/// fixed order (encoder, decoder, blocks) and spectral tensors are then sliced
/// along ky, so every rank count yields shards of the same global model.
template <RealScalar R>
FnoParams<R> init_params(const FnoConfig& cfg, std::uint64_t seed, std::size_t rank = 0) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  FnoParams<R> p;
  p.encoder = detail::glorot<R>(rng, cfg.in_channels, cfg.width);
  p.decoder = detail::glorot<R>(rng, cfg.width, cfg.out_channels);
  const double scale = 1.0 / static_cast<double>(cfg.width * cfg.width);
  const auto ky = cfg.ky_partition();
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    Tensor<std::complex<R>> w(cfg.spectral_weight_dims());
    for (auto& v : w.data()) {
      const double re = scale * uniform01(rng);
      const double im = scale * uniform01(rng);
      v = {static_cast<R>(re), static_cast<R>(im)};
    }
    p.spectral.push_back(spectral_shard(w, ky, rank));
  }
  return p;
}

/// Parameters with the same shapes and all values zero.
template <RealScalar R>
FnoParams<R> zeros_like(const FnoParams<R>& p) {
  FnoParams<R> z;
  z.encoder = Tensor<R>(p.encoder.dims());
  z.decoder = Tensor<R>(p.decoder.dims());
  for (const auto& w : p.spectral) z.spectral.emplace_back(w.dims());
  return z;
}

/// Real inner product over every parameter (spectral weights as R^2).
template <RealScalar R>
double inner(const FnoParams<R>& a, const FnoParams<R>& b) {
  double s = inner(a.encoder, b.encoder) + inner(a.decoder, b.decoder);
  for (std::size_t i = 0; i < a.spectral.size(); ++i) s += inner(a.spectral[i], b.spectral[i]);
  return s;
}

/// a * x + y over every parameter.
template <RealScalar R>
FnoParams<R> axpy(R a, const FnoParams<R>& x, const FnoParams<R>& y) {
  FnoParams<R> out;
  out.encoder = axpy(a, x.encoder, y.encoder);
  out.decoder = axpy(a, x.decoder, y.decoder);
  for (std::size_t i = 0; i < x.spectral.size(); ++i) out.spectral.push_back(axpy(std::complex<R>(a), x.spectral[i], y.spectral[i]));
  return out;
}

/// FNV-1a over the raw bytes of a tensor's values.
template <Scalar T>
std::uint64_t digest(const Tensor<T>& t, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = reinterpret_cast<const unsigned char*>(t.data().data());
  for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace tpfno
