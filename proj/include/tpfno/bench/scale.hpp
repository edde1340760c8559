// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file scale.hpp
/// Weak and strong scaling measurements of the distributed forward and
/// forward+backward passes.
///
/// weak:   N_x grows with P so the per-rank block stays fixed; efficiency T(1)/T(P)
/// strong: the global grid stays fixed;                   efficiency T(1)/(P T(P))
/// T is the median forward+backward wall time.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>

#include "tpfno/fno/model.hpp"

namespace tpfno {

enum class ScaleMode { weak, strong };

inline std::string_view scale_mode_name(ScaleMode m) { return m == ScaleMode::weak ? "weak" : "strong"; }

inline ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "weak") return ScaleMode::weak;
  if (s == "strong") return ScaleMode::strong;
  throw ConfigError("unknown scaling mode '" + s + "'");
}

struct BenchRecord {
  ScaleMode mode = ScaleMode::weak;
  std::size_t num_ranks = 1;
  std::array<std::size_t, 4> local_extents{};  ///< rank 0 block of [x, y, z, t]
  double forward_s = 0.0;                      ///< median seconds
  double forward_backward_s = 0.0;             ///< median seconds
  std::uint64_t comm_elements = 0;             ///< off-rank re-partition elements over the timed forwards
  std::uint64_t comm_bytes = 0;
  double efficiency = 1.0;
};

/// Global config for one point: weak mode multiplies N_x of `base` by P.
inline FnoConfig scale_config(const FnoConfig& base, ScaleMode mode, std::size_t p) {
  FnoConfig c = base;
  c.num_ranks = p;
  if (mode == ScaleMode::weak) c.grid[0] = base.grid[0] * p;
  c.validate();
  return c;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Collective. Runs `warmup` untimed and `iterations` timed passes of each
/// kind; barriers bracket every timed pass so the slowest rank sets the time.
/// Efficiency is left at 1 for the caller to fill in.
template <RealScalar R>
BenchRecord measure_scale_point(Communicator& comm, const FnoConfig& cfg, ScaleMode mode, std::size_t iterations,
                                std::size_t warmup, std::uint64_t seed) {
  if (iterations == 0) throw ConfigError("need at least one timed iteration");
  DistributedFno<R> model(cfg, comm);
  const auto params = init_params<R>(cfg, seed, comm.rank());
  std::mt19937_64 rng(seed ^ 0x5ca1eull);
  Tensor<R> x(cfg.local_dims(cfg.in_channels, comm.rank()));
  for (auto& v : x.data()) v = static_cast<R>(2 * uniform01(rng) - 1);

  using clock = std::chrono::steady_clock;
  auto timed = [&](auto&& body) {
    comm.barrier();
    const auto t0 = clock::now();
    body();
    comm.barrier();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  auto fwd = [&] { model.forward(x, params); };
  auto fwd_bwd = [&] {
    ForwardCache<R> cache;
    auto y = model.forward(x, params, &cache);
    model.backward(params, cache, y);
  };

  for (std::size_t i = 0; i < warmup; ++i) timed(fwd);
  std::vector<double> tf, tfb;
  const CommStats before = comm.comm_report();
  for (std::size_t i = 0; i < iterations; ++i) tf.push_back(timed(fwd));
  const auto moved = (comm.comm_report() - before)[Primitive::repartition];
  for (std::size_t i = 0; i < warmup; ++i) timed(fwd_bwd);
  for (std::size_t i = 0; i < iterations; ++i) tfb.push_back(timed(fwd_bwd));

  BenchRecord rec;
  rec.mode = mode;
  rec.num_ranks = cfg.num_ranks;
  const auto local = cfg.local_dims(1, 0);
  for (std::size_t d = 0; d < 4; ++d) rec.local_extents[d] = local[2 + d].extent;
  // Rank 0's clock decides; every rank reports the same record.
  Tensor<double> shared({{DimLabel::c, 4}});
  if (comm.rank() == 0) {
    shared[0] = detail::median_of(tf);
    shared[1] = detail::median_of(tfb);
  }
  shared[2] = static_cast<double>(moved.elements);
  shared[3] = static_cast<double>(moved.bytes);
  shared = comm.allreduce_sum(shared);
  rec.forward_s = shared[0];
  rec.forward_backward_s = shared[1];
  rec.comm_elements = static_cast<std::uint64_t>(shared[2]);
  rec.comm_bytes = static_cast<std::uint64_t>(shared[3]);
  return rec;
}

/// Fills efficiency from the P=1 record of the same mode.
inline void assign_efficiency(std::vector<BenchRecord>& recs) {
  for (auto& r : recs) {
    const auto base = std::find_if(recs.begin(), recs.end(),
                                   [&](const BenchRecord& b) { return b.mode == r.mode && b.num_ranks == 1; });
    if (base == recs.end()) throw ConfigError("scaling series needs a P=1 point");
    const double ratio = base->forward_backward_s / r.forward_backward_s;
    r.efficiency = r.mode == ScaleMode::weak ? ratio : ratio / static_cast<double>(r.num_ranks);
  }
}

inline constexpr std::string_view kBenchCsvHeader =
    "mode,P,local_nx,local_ny,local_nz,local_nt,forward_s,forward_backward_s,comm_elements,comm_bytes,efficiency";

inline void write_bench_csv(std::ostream& os, std::span<const BenchRecord> recs) {
  os << kBenchCsvHeader << '\n';
  char buf[256];
  for (const auto& r : recs) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%zu,%zu,%.9g,%.9g,%llu,%llu,%.6g\n",
                  std::string(scale_mode_name(r.mode)).c_str(), r.num_ranks, r.local_extents[0], r.local_extents[1],
                  r.local_extents[2], r.local_extents[3], r.forward_s, r.forward_backward_s,
                  static_cast<unsigned long long>(r.comm_elements), static_cast<unsigned long long>(r.comm_bytes),
                  r.efficiency);
    os << buf;
  }
}

/// Inverse of one write_bench_csv data row.
inline BenchRecord parse_bench_row(const std::string& line) {
  std::vector<std::string> f;
  std::size_t pos = 0;
  for (std::size_t end; (end = line.find(',', pos)) != std::string::npos; pos = end + 1) f.push_back(line.substr(pos, end - pos));
  f.push_back(line.substr(pos));
  if (f.size() != 11) throw ConfigError("bench row needs 11 fields: " + line);
  BenchRecord r;
  r.mode = parse_scale_mode(f[0]);
  r.num_ranks = std::stoull(f[1]);
  for (std::size_t d = 0; d < 4; ++d) r.local_extents[d] = std::stoull(f[2 + d]);
  r.forward_s = std::stod(f[6]);
  r.forward_backward_s = std::stod(f[7]);
  r.comm_elements = std::stoull(f[8]);
  r.comm_bytes = std::stoull(f[9]);
  r.efficiency = std::stod(f[10]);
  return r;
}

}  // namespace tpfno
