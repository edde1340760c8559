// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file parity.hpp
/// Self-checks run by `tpfno parity`: oracle parity, adjoint identities,
/// finite-difference gradients and communication volume. Every suite is a
/// collective and returns the same result on every rank.

#include <cstdio>
#include <ostream>

#include "tpfno/fno/model.hpp"

namespace tpfno {

struct SuiteResult {
  std::string name;
  double metric = 0.0;     ///< worst observed error (or mismatch count)
  double tolerance = 0.0;  ///< pass iff metric <= tolerance
  std::string detail;

  bool passed() const { return metric <= tolerance; }
};

namespace detail {

template <Scalar T>
Tensor<T> seeded_tensor(std::vector<Dim> dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<T> t(std::move(dims));
  for (auto& v : t.data()) {
    if constexpr (scalar_traits<T>::is_complex) {
      const double re = 2 * uniform01(rng) - 1;
      v = T(static_cast<real_t<T>>(re), static_cast<real_t<T>>(2 * uniform01(rng) - 1));
    } else {
      v = static_cast<T>(2 * uniform01(rng) - 1);
    }
  }
  return t;
}

template <Scalar T>
Tensor<T> slab_of(const Tensor<T>& global, const Partition& p, std::size_t rank) {
  Box frame;
  for (const auto& d : global.dims()) frame.ranges.push_back({0, d.extent});
  return extract_block(global, frame, slab_box(p, global.dims(), rank));
}

template <RealScalar R>
FnoParams<R> global_init(FnoConfig cfg, std::uint64_t seed) {
  cfg.num_ranks = 1;
  return init_params<R>(cfg, seed, 0);
}

template <RealScalar R>
FnoParams<R> local_view(const FnoParams<R>& g, const FnoConfig& cfg, std::size_t rank) {
  FnoParams<R> p{g.encoder, g.decoder, {}};
  for (const auto& w : g.spectral) p.spectral.push_back(spectral_shard(w, cfg.ky_partition(), rank));
  return p;
}

inline double adjoint_gap(std::complex<double> a, std::complex<double> b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace detail

/// Gathered distributed forward vs serial_fno_forward, relative error.
template <RealScalar R>
SuiteResult oracle_suite(Communicator& comm, FnoConfig cfg, std::uint64_t seed) {
  cfg.num_ranks = comm.size();
  const auto x = detail::seeded_tensor<R>(cfg.global_dims(cfg.in_channels), seed);
  const auto gp = detail::global_init<R>(cfg, seed + 1);
  DistributedFno<R> model(cfg, comm);
  const auto y = model.forward(detail::slab_of(x, cfg.x_partition(), comm.rank()),
                               detail::local_view(gp, cfg, comm.rank()));
  const auto full = comm.gather(y, cfg.x_partition());
  double err = comm.rank() == 0 ? relative_error(full, serial_fno_forward(cfg, x, gp)) : 0.0;
  err = comm.allreduce_sum(err);
  return {"oracle", err, std::is_same_v<R, float> ? 1e-4 : 1e-10, cfg.describe()};
}

/// <L x, y> = <x, L^T y> for S, F, R and B over `trials` random pairs each
/// (complex128 for the spectral operators).
inline SuiteResult adjoint_suite(Communicator& comm, const FnoConfig& cfg, std::uint64_t seed, std::size_t trials = 20) {
  using C = std::complex<double>;
  const std::size_t p = comm.size();
  double worst = 0.0;
  const auto spec = cfg.mode_spec();
  const auto& n = cfg.grid;
  const auto r = cfg.retained();
  const std::vector<Dim> spatial{{DimLabel::b, 1}, {DimLabel::c, 2}, {DimLabel::x, n[0]},
                                 {DimLabel::y, n[1]}, {DimLabel::z, n[2]}, {DimLabel::t, n[3]}};
  std::vector<Dim> spectral = spatial;
  for (std::size_t d = 2; d < 6; ++d) spectral[d].label = to_spectral(spectral[d].label);
  std::vector<Dim> truncated = spectral;
  for (std::size_t d = 0; d < 4; ++d) truncated[2 + d].extent = r[d];
  std::vector<Dim> moving = truncated;  // [b, c, x, ky, kz, kt] as carried by R
  moving[2] = {DimLabel::x, n[0]};
  const Partition px(DimLabel::x, n[0], p), pky(DimLabel::ky, r[1], p);

  for (std::size_t k = 0; k < trials; ++k) {
    const std::uint64_t s = seed + 16 * k;
    {  // S / S^T
      const auto a = detail::seeded_tensor<C>(spectral, s);
      const auto b = detail::seeded_tensor<C>(truncated, s + 1);
      worst = std::max(worst, detail::adjoint_gap(inner_complex(truncate_modes(a, spec), b), inner_complex(a, pad_modes(b, spec, spectral))));
    }
    {  // F / F^T
      const auto a = detail::seeded_tensor<C>(spatial, s + 2);
      const auto b = detail::seeded_tensor<C>(spectral, s + 3);
      worst = std::max(worst, detail::adjoint_gap(inner_complex(fft_dims<double>(a, kSpatialLabels), b),
                                                  inner_complex(a, fft_adjoint_dims<double>(b, kSpectralLabels))));
    }
    {  // R_{x->ky} / R_{ky->x}, summed over ranks
      const auto a = detail::seeded_tensor<C>(moving, s + 4);
      const auto b = detail::seeded_tensor<C>(moving, s + 5);
      const auto ra = comm.repartition(detail::slab_of(a, px, comm.rank()), px, pky);
      const auto rtb = comm.repartition(detail::slab_of(b, pky, comm.rank()), pky, px);
      Tensor<double> dots({{DimLabel::c, 4}});
      const C lhs = inner_complex(ra, detail::slab_of(b, pky, comm.rank()));
      const C rhs = inner_complex(detail::slab_of(a, px, comm.rank()), rtb);
      dots[0] = lhs.real(), dots[1] = lhs.imag(), dots[2] = rhs.real(), dots[3] = rhs.imag();
      dots = comm.allreduce_sum(dots);
      worst = std::max(worst, detail::adjoint_gap({dots[0], dots[1]}, {dots[2], dots[3]}));
    }
    {  // B / reduce_sum: <B w, y> over all ranks vs <w, sum_r y_r> on the root
      const std::vector<Dim> wd{{DimLabel::c, 3}, {DimLabel::c, 5}};
      const auto w = detail::seeded_tensor<C>(wd, s + 6);
      const auto y = detail::seeded_tensor<C>(wd, s + 7 + comm.rank());
      const auto bw = comm.broadcast(comm.rank() == 0 ? w : Tensor<C>(wd), 0);
      const auto ry = comm.reduce_sum(y, 0);
      Tensor<double> dots({{DimLabel::c, 4}});
      const C lhs = inner_complex(bw, y);
      dots[0] = lhs.real(), dots[1] = lhs.imag();
      if (comm.rank() == 0) {
        const C rhs = inner_complex(w, ry);
        dots[2] = rhs.real(), dots[3] = rhs.imag();
      }
      dots = comm.allreduce_sum(dots);
      worst = std::max(worst, detail::adjoint_gap({dots[0], dots[1]}, {dots[2], dots[3]}));
    }
  }
  return {"adjoint", worst, 1e-12, std::to_string(trials) + " pairs per operator (S, F, R, B)"};
}

namespace detail {

struct HalfNormSq {
  double loss = 0.0;
  double directional = 0.0;
};

// L = 1/2 ||f(X)||^2 and <dL/dparams, dir> (directional skipped if dir is null).
inline HalfNormSq half_norm_sq(Communicator& comm, const FnoConfig& cfg, const Tensor<double>& x_local,
                               const FnoParams<double>& g, const FnoParams<double>* dir) {
  DistributedFno<double> model(cfg, comm);
  ForwardCache<double> cache;
  const auto lp = local_view(g, cfg, comm.rank());
  const auto y = model.forward(x_local, lp, &cache);
  HalfNormSq out;
  out.loss = 0.5 * comm.allreduce_sum(inner(y, y));
  if (!dir) return out;
  const auto grads = model.backward(lp, cache, y);
  const auto ld = local_view(*dir, cfg, comm.rank());
  double dd = 0.0;
  if (comm.rank() == 0) dd += inner(grads.params.encoder, ld.encoder) + inner(grads.params.decoder, ld.decoder);
  for (std::size_t i = 0; i < ld.spectral.size(); ++i) dd += inner(grads.params.spectral[i], ld.spectral[i]);
  out.directional = comm.allreduce_sum(dd);
  return out;
}

}  // namespace detail

/// Central differences (step 1e-6) of 1/2 ||f||^2 along `directions` random
/// parameter directions, real64, on a small config (8x8x8x4, widened for
/// large P).
inline SuiteResult gradient_suite(Communicator& comm, std::uint64_t seed, std::size_t directions = 20) {
  FnoConfig cfg;
  cfg.grid = {std::max<std::size_t>(8, comm.size()), 8, 8, 4};
  cfg.modes = {2, std::max<std::size_t>(2, (comm.size() + 1) / 2), 2, 2};
  cfg.in_channels = 2;
  cfg.width = 3;
  cfg.out_channels = 2;
  cfg.num_ranks = comm.size();
  const auto x = detail::slab_of(detail::seeded_tensor<double>(cfg.global_dims(2), seed), cfg.x_partition(), comm.rank());
  const auto g = detail::global_init<double>(cfg, seed + 1);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < directions; ++k) {
    FnoParams<double> dir = zeros_like(g);
    std::mt19937_64 rng(seed + 100 + k);
    for (auto& v : dir.encoder.data()) v = 2 * uniform01(rng) - 1;
    for (auto& v : dir.decoder.data()) v = 2 * uniform01(rng) - 1;
    for (auto& w : dir.spectral)
      for (auto& v : w.data()) v = {2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1};
    const double fp = detail::half_norm_sq(comm, cfg, x, axpy(h, dir, g), nullptr).loss;
    const double fm = detail::half_norm_sq(comm, cfg, x, axpy(-h, dir, g), nullptr).loss;
    const double an = detail::half_norm_sq(comm, cfg, x, g, &dir).directional;
    worst = std::max(worst, std::abs((fp - fm) / (2 * h) - an) / std::max(std::abs(an), 1e-300));
  }
  return {"gradient", worst, 1e-5, std::to_string(directions) + " directions, " + cfg.describe()};
}

/// Measured re-partition traffic of one forward pass against
/// predicted_block_volume; metric counts mismatches.
inline SuiteResult comm_volume_suite(Communicator& comm, FnoConfig cfg, std::uint64_t seed) {
  cfg.num_ranks = comm.size();
  DistributedFno<double> model(cfg, comm);
  const auto x = detail::seeded_tensor<double>(cfg.local_dims(cfg.in_channels, comm.rank()), seed + comm.rank());
  const auto params = init_params<double>(cfg, seed + 1, comm.rank());
  const auto before = comm.comm_report();
  model.forward(x, params);
  const auto moved = (comm.comm_report() - before)[Primitive::repartition];
  Tensor<double> t({{DimLabel::c, 2}});
  t[0] = static_cast<double>(moved.elements);
  t[1] = moved.calls == 2 * cfg.num_blocks ? 0.0 : 1.0;
  t = comm.allreduce_sum(t);
  const auto v = predicted_block_volume(cfg);
  const auto measured = static_cast<std::uint64_t>(t[0]);
  const std::uint64_t expected = 2 * cfg.num_blocks * v.truncated;
  const auto r = cfg.retained();
  const double ratio = static_cast<double>(cfg.grid[1] * cfg.grid[2] * cfg.grid[3]) / static_cast<double>(r[1] * r[2] * r[3]);
  double mismatches = t[1];
  if (measured != expected) mismatches += 1;
  if (v.ratio != ratio) mismatches += 1;
  char buf[200];
  std::snprintf(buf, sizeof buf, "measured %llu elements, predicted %llu; volume ratio %.6g",
                static_cast<unsigned long long>(measured), static_cast<unsigned long long>(expected), v.ratio);
  return {"comm-volume", mismatches, 0.0, buf};
}

inline constexpr std::string_view kParityCsvHeader = "suite,P,metric,tolerance,pass,detail";

inline void write_parity_csv(std::ostream& os, std::size_t p, std::span<const SuiteResult> rows) {
  os << kParityCsvHeader << '\n';
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6e,%.1e", r.metric, r.tolerance);
    os << r.name << ',' << p << ',' << buf << ',' << (r.passed() ? "PASS" : "FAIL") << ",\"" << r.detail << "\"\n";
  }
}

}  // namespace tpfno
