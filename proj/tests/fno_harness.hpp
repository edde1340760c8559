// SPDX-License-Identifier: Apache-2.0
#pragma once

// Runs the distributed model on globally specified tensors and parameters so
// tests can compare against whole-tensor oracles.

#include "test_util.hpp"
#include "tpfno/comm/launch.hpp"
#include "tpfno/fno/train.hpp"

namespace tpfno::test {

inline Box full_box(const std::vector<Dim>& dims) {
  Box b;
  for (const auto& d : dims) b.ranges.push_back({0, d.extent});
  return b;
}

template <Scalar T>
Tensor<T> x_slab(const Tensor<T>& global, const FnoConfig& cfg, std::size_t rank) {
  return extract_block(global, full_box(global.dims()), slab_box(cfg.x_partition(), global.dims(), rank));
}

/// Rank-local view of globally specified parameters.
template <RealScalar R>
FnoParams<R> shard_params(const FnoParams<R>& global, const FnoConfig& cfg, std::size_t rank) {
  FnoParams<R> p{global.encoder, global.decoder, {}};
  for (const auto& w : global.spectral) p.spectral.push_back(spectral_shard(w, cfg.ky_partition(), rank));
  return p;
}

/// Global parameters with the same distribution init_params uses.
template <RealScalar R>
FnoParams<R> global_params(FnoConfig cfg, std::uint64_t seed) {
  cfg.num_ranks = 1;
  return init_params<R>(cfg, seed, 0);
}

template <RealScalar R>
FnoParams<R> random_direction(const FnoConfig& cfg, std::mt19937_64& rng) {
  FnoParams<R> d = global_params<R>(cfg, 0);
  for (auto& v : d.encoder.data()) v = static_cast<R>(2 * uniform01(rng) - 1);
  for (auto& v : d.decoder.data()) v = static_cast<R>(2 * uniform01(rng) - 1);
  for (auto& w : d.spectral)
    for (auto& v : w.data()) v = {static_cast<R>(2 * uniform01(rng) - 1), static_cast<R>(2 * uniform01(rng) - 1)};
  return d;
}

/// Gathered distributed forward output (valid on the returned value only).
template <RealScalar R>
Tensor<R> distributed_forward(const FnoConfig& cfg, const Tensor<R>& x, const FnoParams<R>& global) {
  auto res = run_inproc(cfg.num_ranks, [&](Communicator& c) {
    DistributedFno<R> model(cfg, c);
    auto y = model.forward(x_slab(x, cfg, c.rank()), shard_params(global, cfg, c.rank()));
    return c.gather(y, cfg.x_partition());
  });
  return std::move(res.values[0]);
}

}  // namespace tpfno::test
