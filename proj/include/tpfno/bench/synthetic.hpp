// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file synthetic.hpp
/// Deterministic spectral-propagator datasets.
///
/// Inputs are smooth random real fields a(x, y, z), band-limited to the
/// paired low modes |k_d| < m_d and repeated along t. Targets are
///
///   y = sigma(Re F^-1 S^T (K . S F a))
///
/// with K a fixed random complex kernel on the paired modes. The map is
/// exactly an FNO of this library's architecture; teacher_params builds it.

#include <random>

#include "tpfno/fno/params.hpp"

namespace tpfno {

struct SyntheticSpec {
  FnoConfig model;  ///< grid, modes and activation used by the student
  std::uint64_t seed = 42;
  std::size_t train_samples = 200;
  std::size_t test_samples = 50;
};

/// Samples are global [b=1, c=1, x, y, z, t] tensors.
template <RealScalar R>
struct SyntheticProblem {
  SyntheticSpec spec;
  Tensor<std::complex<R>> kernel;  ///< [kx, ky, kz, kt] over the retained modes
  std::vector<Tensor<R>> inputs;
  std::vector<Tensor<R>> targets;

  std::size_t size() const noexcept { return inputs.size(); }
  std::size_t train_size() const noexcept { return spec.train_samples; }
};

namespace detail {

// |k| < m on a dim of extent n, counting index n - j as frequency -j.
inline bool in_paired_band(std::size_t k, std::size_t n, std::size_t m) {
  return k < m || n - k < m;
}

inline std::vector<Dim> sample_dims(const FnoConfig& c) {
  return {{DimLabel::b, 1}, {DimLabel::c, 1}, {DimLabel::x, c.grid[0]},
          {DimLabel::y, c.grid[1]}, {DimLabel::z, c.grid[2]}, {DimLabel::t, c.grid[3]}};
}

inline std::vector<Dim> retained_dims(const FnoConfig& c) {
  const auto r = c.retained();
  return {{DimLabel::kx, r[0]}, {DimLabel::ky, r[1]}, {DimLabel::kz, r[2]}, {DimLabel::kt, r[3]}};
}

// Unit-RMS field from white noise filtered to the paired band, constant in t.
template <RealScalar R>
Tensor<R> smooth_field(const FnoConfig& c, std::mt19937_64& rng) {
  const auto& n = c.grid;
  Tensor<std::complex<double>> w({{DimLabel::x, n[0]}, {DimLabel::y, n[1]}, {DimLabel::z, n[2]}});
  for (auto& v : w.data()) v = 2.0 * uniform01(rng) - 1.0;
  static constexpr std::array<DimLabel, 3> xyz{DimLabel::x, DimLabel::y, DimLabel::z};
  static constexpr std::array<DimLabel, 3> kxyz{DimLabel::kx, DimLabel::ky, DimLabel::kz};
  auto s = fft_dims<double>(std::move(w), xyz);
  std::size_t i = 0;
  for (std::size_t a = 0; a < n[0]; ++a)
    for (std::size_t b = 0; b < n[1]; ++b)
      for (std::size_t d = 0; d < n[2]; ++d, ++i)
        if (!in_paired_band(a, n[0], c.modes[0]) || !in_paired_band(b, n[1], c.modes[1]) ||
            !in_paired_band(d, n[2], c.modes[2]))
          s[i] = 0.0;
  const auto f = real_part(ifft_dims<double>(std::move(s), kxyz));
  const double rms = std::sqrt(inner(f, f) / static_cast<double>(f.size()));
  Tensor<R> out(sample_dims(c));
  for (std::size_t p = 0; p < f.size(); ++p)
    for (std::size_t t = 0; t < n[3]; ++t) out[p * n[3] + t] = static_cast<R>(f[p] / rms);
  return out;
}

// Re F^-1 S^T (K . S F a) on one sample, evaluated in double.
template <RealScalar R>
Tensor<double> propagate(const FnoConfig& c, const Tensor<std::complex<double>>& k, const Tensor<R>& a) {
  Tensor<double> ad(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) ad[i] = a[i];
  auto z = truncate_modes(fft_dims<double>(to_complex(ad), kSpatialLabels), c.mode_spec());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] *= k[i];
  std::vector<Dim> full = ad.dims();
  for (std::size_t d = 2; d < full.size(); ++d) full[d].label = to_spectral(full[d].label);
  return real_part(ifft_dims<double>(pad_modes(z, c.mode_spec(), full), kSpectralLabels));
}

}  // namespace detail

/// Generates inputs and targets; same spec, same bits.
template <RealScalar R>
SyntheticProblem<R> make_synthetic(const SyntheticSpec& spec) {
  const FnoConfig& c = spec.model;
  c.validate();
  SyntheticProblem<R> p{spec, {}, {}, {}};
  std::mt19937_64 rng(spec.seed);

  Tensor<std::complex<double>> k(detail::retained_dims(c));
  const auto idx_x = retained_indices(c.grid[0], c.modes[0]);
  const auto idx_y = retained_indices(c.grid[1], c.modes[1]);
  const auto idx_z = retained_indices(c.grid[2], c.modes[2]);
  const auto idx_t = retained_indices(c.grid[3], c.modes[3]);
  std::size_t i = 0;
  for (auto a : idx_x)
    for (auto b : idx_y)
      for (auto d : idx_z)
        for (auto t : idx_t) {
          const double re = 2.0 * uniform01(rng) - 1.0;
          const double im = 2.0 * uniform01(rng) - 1.0;
          const bool keep = detail::in_paired_band(a, c.grid[0], c.modes[0]) &&
                            detail::in_paired_band(b, c.grid[1], c.modes[1]) &&
                            detail::in_paired_band(d, c.grid[2], c.modes[2]) &&
                            detail::in_paired_band(t, c.grid[3], c.modes[3]);
          k[i++] = keep ? std::complex<double>(re, im) : 0.0;
        }

  const std::size_t n = spec.train_samples + spec.test_samples;
  std::vector<Tensor<double>> pre;
  double sq = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    p.inputs.push_back(detail::smooth_field<R>(c, rng));
    pre.push_back(detail::propagate(c, k, p.inputs.back()));
    sq += inner(pre.back(), pre.back());
  }
  // Unit RMS before the activation keeps sigma in its nonlinear range.
  const double gain = 1.0 / std::sqrt(sq / static_cast<double>(n * pre.front().size()));
  for (auto& v : k.data()) v *= gain;
  for (auto& t : pre) {
    Tensor<R> y(t.dims());
    for (std::size_t j = 0; j < t.size(); ++j) y[j] = activate(c.activation, static_cast<R>(gain * t[j]));
    p.targets.push_back(std::move(y));
  }
  p.kernel = Tensor<std::complex<R>>(k.dims());
  for (std::size_t j = 0; j < k.size(); ++j) p.kernel[j] = std::complex<R>(k[j]);
  return p;
}

/// Global parameters of an FNO (width >= 2, c_in = c_out = 1) whose output
/// equals the problem's targets. Channels 0 and 1 carry +u and -u: the
/// encoder maps a to (a, -a), each block forms K u or u from
/// sigma(u) - sigma(-u) = u, and the decoder takes the same difference.
/// Holds for gelu and relu.
template <RealScalar R>
FnoParams<R> teacher_params(const SyntheticProblem<R>& p) {
  FnoConfig c = p.spec.model;
  c.num_ranks = 1;
  if (c.width < 2 || c.in_channels != 1 || c.out_channels != 1) {
    throw ConfigError("teacher needs width >= 2 and one input and output channel");
  }
  if (c.activation == Activation::identity) throw ConfigError("teacher needs gelu or relu");
  FnoParams<R> t = zeros_like(init_params<R>(c, 0));
  const R sign[2] = {R(1), R(-1)};
  for (std::size_t j = 0; j < 2; ++j) {
    t.encoder[j] = sign[j];
    t.decoder[j] = sign[j];
  }
  const std::size_t modes = p.kernel.size();
  for (std::size_t blk = 0; blk < c.num_blocks; ++blk) {
    auto& w = t.spectral[blk];
    for (std::size_t ci = 0; ci < 2; ++ci)
      for (std::size_t co = 0; co < 2; ++co)
        for (std::size_t m = 0; m < modes; ++m) {
          const std::complex<R> pass = p.kernel[m] == std::complex<R>{} ? R(0) : R(1);
          w[(ci * c.width + co) * modes + m] = sign[ci] * sign[co] * (blk == 0 ? p.kernel[m] : pass);
        }
  }
  return t;
}

}  // namespace tpfno
