// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file spectral.hpp
/// Multi-dimensional FFTs along labeled dims, low-frequency truncation S and
/// its zero-padding adjoint S^T.
///
/// Conventions, used everywhere including gradients:
///   forward  F      : unnormalized, X[k] = sum_n x[n] exp(-2 pi i k n / N)
///   inverse  F^-1   : scaled by 1/N per transformed dim, so F^-1 F = I
///   adjoint  F^T    : conjugate transpose = N F^-1
///   (F^-1)^T        : F / N
/// Truncation along a dim of extent N with m modes keeps indices
/// {0..m-1} followed by {N-m..N-1}; when 2m >= N the dim is left intact.

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "tpfno/tensor.hpp"

namespace tpfno {

namespace detail {

template <std::floating_point R>
struct Fftw;

template <>
struct Fftw<double> {
  using plan = fftw_plan;
  using cplx = fftw_complex;
  using iodim = fftw_iodim64;
  static plan make(int rank, const iodim* dims, int hrank, const iodim* hdims, cplx* in, cplx* out, int sign,
                   unsigned flags) {
    return fftw_plan_guru64_dft(rank, dims, hrank, hdims, in, out, sign, flags);
  }
  static void run(plan p, cplx* in, cplx* out) { fftw_execute_dft(p, in, out); }
};

template <>
struct Fftw<float> {
  using plan = fftwf_plan;
  using cplx = fftwf_complex;
  using iodim = fftwf_iodim64;
  static plan make(int rank, const iodim* dims, int hrank, const iodim* hdims, cplx* in, cplx* out, int sign,
                   unsigned flags) {
    return fftwf_plan_guru64_dft(rank, dims, hrank, hdims, in, out, sign, flags);
  }
  static void run(plan p, cplx* in, cplx* out) { fftwf_execute_dft(p, in, out); }
};

// The FFTW planner is not thread-safe; execution with new arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Out-of-place DFT along the middle axis of an [outer, n, inner] array,
/// unscaled, with exponent sign -1 (forward) or +1 (backward).
template <std::floating_point R>
void dft_strided(const std::complex<R>* in, std::complex<R>* out, std::size_t outer, std::size_t n, std::size_t inner,
                 bool backward) {
  using W = Fftw<R>;
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, bool>;
  static std::map<Key, typename W::plan> plans;
  auto* i = reinterpret_cast<typename W::cplx*>(const_cast<std::complex<R>*>(in));
  auto* o = reinterpret_cast<typename W::cplx*>(out);
  typename W::plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    const Key key{outer, n, inner, backward};
    auto it = plans.find(key);
    if (it == plans.end()) {
      const auto si = static_cast<std::ptrdiff_t>(inner), sn = static_cast<std::ptrdiff_t>(n * inner);
      const typename W::iodim dim{static_cast<std::ptrdiff_t>(n), si, si};
      const typename W::iodim loops[2] = {{static_cast<std::ptrdiff_t>(outer), sn, sn}, {si, 1, 1}};
      auto p = W::make(1, &dim, 2, loops, i, o, backward ? FFTW_BACKWARD : FFTW_FORWARD,
                       FFTW_ESTIMATE | FFTW_UNALIGNED);
      if (!p) throw DimensionMismatch("FFT planning failed for length " + std::to_string(n));
      it = plans.emplace(key, p).first;
    }
    plan = it->second;
  }
  W::run(plan, i, o);
}

/// DFT along `axis`, result multiplied by `scale`.
template <std::floating_point R>
Tensor<std::complex<R>> dft_axis(const Tensor<std::complex<R>>& x, std::size_t axis, bool backward, R scale) {
  const auto s = split_at(x.dims(), axis);
  if (s.channels == 0) throw DimensionMismatch("FFT length must be positive");
  Tensor<std::complex<R>> out(x.dims());
  if (x.size() == 0) return out;
  dft_strided<R>(x.data().data(), out.data().data(), s.outer, s.channels, s.inner, backward);
  if (scale != R(1))
    for (auto& v : out.data()) v *= scale;
  return out;
}

enum class TransformKind { forward, inverse, forward_adjoint, inverse_adjoint };

template <std::floating_point R>
Tensor<std::complex<R>> transform_dims(Tensor<std::complex<R>> x, std::span<const DimLabel> labels, TransformKind kind) {
  const bool from_spatial = kind == TransformKind::forward || kind == TransformKind::inverse_adjoint;
  for (DimLabel l : labels) {
    if (from_spatial ? !is_spatial(l) : !is_spectral(l)) {
      throw UnknownLabel("cannot transform along '" + std::string(label_name(l)) + "' in this direction");
    }
    const std::size_t ax = x.axis(l);
    const R n = static_cast<R>(x.extent(ax));
    switch (kind) {
      case TransformKind::forward: x = dft_axis<R>(x, ax, false, R(1)); break;
      case TransformKind::inverse: x = dft_axis<R>(x, ax, true, R(1) / n); break;
      case TransformKind::forward_adjoint: x = dft_axis<R>(x, ax, true, R(1)); break;
      case TransformKind::inverse_adjoint: x = dft_axis<R>(x, ax, false, R(1) / n); break;
    }
    x = std::move(x).relabeled(ax, from_spatial ? to_spectral(l) : to_spatial(l));
  }
  return x;
}

}  // namespace detail

/// Unnormalized forward FFT along the given spatial labels (x -> kx, ...).
template <std::floating_point R>
Tensor<std::complex<R>> fft_dims(Tensor<std::complex<R>> x, std::span<const DimLabel> labels) {
  return detail::transform_dims<R>(std::move(x), labels, detail::TransformKind::forward);
}

template <std::floating_point R>
Tensor<std::complex<R>> fft_dims(const Tensor<R>& x, std::span<const DimLabel> labels) {
  return fft_dims<R>(to_complex(x), labels);
}

/// Inverse FFT (1/N per dim) along the given spectral labels (kx -> x, ...).
template <std::floating_point R>
Tensor<std::complex<R>> ifft_dims(Tensor<std::complex<R>> x, std::span<const DimLabel> labels) {
  return detail::transform_dims<R>(std::move(x), labels, detail::TransformKind::inverse);
}

/// Adjoint of fft_dims: N * ifft, spectral labels -> spatial.
template <std::floating_point R>
Tensor<std::complex<R>> fft_adjoint_dims(Tensor<std::complex<R>> x, std::span<const DimLabel> labels) {
  return detail::transform_dims<R>(std::move(x), labels, detail::TransformKind::forward_adjoint);
}

/// Adjoint of ifft_dims: fft / N, spatial labels -> spectral.
template <std::floating_point R>
Tensor<std::complex<R>> ifft_adjoint_dims(Tensor<std::complex<R>> x, std::span<const DimLabel> labels) {
  return detail::transform_dims<R>(std::move(x), labels, detail::TransformKind::inverse_adjoint);
}

// ---------------------------------------------------------------------------
// Mode truncation

struct ModeEntry {
  DimLabel label;  ///< spectral label
  std::size_t modes;
  friend bool operator==(const ModeEntry&, const ModeEntry&) = default;
};

/// Retained mode counts per spectral dim.
struct ModeSpec {
  std::vector<ModeEntry> entries;

  ModeSpec() = default;
  ModeSpec(std::initializer_list<ModeEntry> e) : entries(e) {
    for (const auto& m : entries) {
      if (!is_spectral(m.label)) throw UnknownLabel("mode spec needs spectral labels");
      if (m.modes == 0) throw ConfigError("mode count must be positive");
    }
  }

  /// The entry for one label only.
  ModeSpec only(DimLabel l) const {
    for (const auto& e : entries)
      if (e.label == l) return ModeSpec{e};
    throw UnknownLabel("no mode entry for '" + std::string(label_name(l)) + "'");
  }
};

inline std::size_t retained_extent(std::size_t n, std::size_t modes) { return std::min(2 * modes, n); }

/// Original indices kept along a dim of extent n, in output order.
inline std::vector<std::size_t> retained_indices(std::size_t n, std::size_t modes) {
  std::vector<std::size_t> idx;
  if (2 * modes >= n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  for (std::size_t i = 0; i < modes; ++i) idx.push_back(i);
  for (std::size_t i = n - modes; i < n; ++i) idx.push_back(i);
  return idx;
}

namespace detail {

template <Scalar T>
Tensor<T> select_along(const Tensor<T>& x, std::size_t axis, std::span<const std::size_t> idx, std::size_t full) {
  // Gather (full == 0): out[j] = x[idx[j]]. Scatter (full > 0): out[idx[j]] = x[j], zeros elsewhere.
  const auto s = split_at(x.dims(), axis);
  std::vector<Dim> dims = x.dims();
  dims[axis].extent = full ? full : idx.size();
  Tensor<T> out(std::move(dims));
  const std::size_t n_in = s.channels, n_out = out.extent(axis);
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t from = full ? j : idx[j];
      const std::size_t to = full ? idx[j] : j;
      std::copy_n(src + (o * n_in + from) * s.inner, s.inner, dst + (o * n_out + to) * s.inner);
    }
  }
  return out;
}

}  // namespace detail

/// Keeps the low-frequency modes of every dim named in `spec`.
template <ComplexScalar T>
Tensor<T> truncate_modes(const Tensor<T>& x, const ModeSpec& spec) {
  Tensor<T> out = x;
  for (const auto& e : spec.entries) {
    const std::size_t ax = out.axis(e.label);
    const std::size_t n = out.extent(ax);
    if (2 * e.modes >= n) continue;
    const auto idx = retained_indices(n, e.modes);
    out = detail::select_along(out, ax, idx, 0);
  }
  return out;
}

/// Adjoint of truncate_modes: scatters retained modes back to their original
/// indices in a tensor of shape `full` (same labels as x), zeros elsewhere.
template <ComplexScalar T>
Tensor<T> pad_modes(const Tensor<T>& x, const ModeSpec& spec, std::span<const Dim> full) {
  if (full.size() != x.rank()) throw ExtentMismatch("pad_modes: rank mismatch");
  for (std::size_t d = 0; d < full.size(); ++d) {
    if (full[d].label != x.label(d)) throw ExtentMismatch("pad_modes: label order mismatch");
    bool in_spec = false;
    for (const auto& e : spec.entries) {
      if (e.label != full[d].label) continue;
      in_spec = true;
      if (x.extent(d) != retained_extent(full[d].extent, e.modes)) {
        throw ExtentMismatch("pad_modes: extent " + std::to_string(x.extent(d)) + " along '" +
                             std::string(label_name(e.label)) + "' is not the retained size of " +
                             std::to_string(full[d].extent));
      }
    }
    if (!in_spec && x.extent(d) != full[d].extent) throw ExtentMismatch("pad_modes: untruncated extent differs");
  }
  Tensor<T> out = x;
  for (const auto& e : spec.entries) {
    const std::size_t ax = out.axis(e.label);
    const std::size_t n = full[ax].extent;
    if (2 * e.modes >= n) continue;
    const auto idx = retained_indices(n, e.modes);
    out = detail::select_along(out, ax, idx, n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Staged transforms: FFT + truncation one dim at a time. Because transforms
// and truncations along different dims commute, fft_truncate over (t, z, y)
// equals S_yzt F_yzt.

namespace detail {

enum class PrunedKind {
  truncate,            ///< S F
  pad_inverse,         ///< F^-1 S^T
  truncate_adjoint,    ///< F^T S^T
  pad_inverse_adjoint  ///< S (F^-1)^T
};

template <std::floating_point R>
Tensor<std::complex<R>> pruned_stage(const Tensor<std::complex<R>>& x, DimLabel from, DimLabel to, std::size_t n,
                                     std::size_t modes, PrunedKind kind) {
  const std::size_t ax = x.axis(from);
  const auto idx = retained_indices(n, modes);
  const bool to_modes = kind == PrunedKind::truncate || kind == PrunedKind::pad_inverse_adjoint;
  if (x.extent(ax) != (to_modes ? n : idx.size())) {
    throw ExtentMismatch("extent " + std::to_string(x.extent(ax)) + " along '" + std::string(label_name(from)) +
                         "' does not match the transform");
  }
  const R scale = (kind == PrunedKind::pad_inverse || kind == PrunedKind::pad_inverse_adjoint) ? R(1) / static_cast<R>(n)
                                                                                             : R(1);
  const bool backward = !to_modes;
  if (idx.size() == n) return dft_axis<R>(x, ax, backward, scale).relabeled(ax, to);

  // Full-length spectrum of every line lives in a per-thread scratch buffer.
  using C = std::complex<R>;
  const auto sp = split_at(x.dims(), ax);
  thread_local std::vector<C> scratch;
  scratch.resize(sp.outer * n * sp.inner);
  std::vector<Dim> dims = x.dims();
  dims[ax] = {to, to_modes ? idx.size() : n};
  Tensor<C> y(std::move(dims));
  const std::size_t r = idx.size();
  if (to_modes) {
    dft_strided<R>(x.data().data(), scratch.data(), sp.outer, n, sp.inner, backward);
    C* dst = y.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < r; ++j) {
        const C* src = scratch.data() + (o * n + idx[j]) * sp.inner;
        C* out = dst + (o * r + j) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) out[i] = src[i] * scale;
      }
  } else {
    std::fill(scratch.begin(), scratch.end(), C{});
    const C* src = x.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < r; ++j) {
        const C* in = src + (o * r + j) * sp.inner;
        C* out = scratch.data() + (o * n + idx[j]) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) out[i] = in[i] * scale;
      }
    dft_strided<R>(scratch.data(), y.data().data(), sp.outer, n, sp.inner, backward);
  }
  return y;
}

inline std::size_t modes_for(const ModeSpec& spec, DimLabel spectral_label) {
  return spec.only(spectral_label).entries.front().modes;
}

}  // namespace detail

/// S_l F_l for each spatial label in order.
template <std::floating_point R>
Tensor<std::complex<R>> fft_truncate(Tensor<std::complex<R>> x, std::span<const DimLabel> spatial, const ModeSpec& spec) {
  for (DimLabel l : spatial) {
    if (!is_spatial(l)) throw UnknownLabel("fft_truncate needs spatial labels");
    const DimLabel k = to_spectral(l);
    x = detail::pruned_stage<R>(x, l, k, x.extent(x.axis(l)), detail::modes_for(spec, k), detail::PrunedKind::truncate);
  }
  return x;
}

/// Adjoint of fft_truncate: F_l^T S_l^T in reverse order. `full` gives the
/// extents of the untruncated spectral tensor.
template <std::floating_point R>
Tensor<std::complex<R>> fft_truncate_adjoint(Tensor<std::complex<R>> x, std::span<const DimLabel> spatial,
                                             const ModeSpec& spec, std::span<const std::size_t> full) {
  for (std::size_t i = spatial.size(); i-- > 0;) {
    const DimLabel k = to_spectral(spatial[i]);
    x = detail::pruned_stage<R>(x, k, spatial[i], full[i], detail::modes_for(spec, k),
                                detail::PrunedKind::truncate_adjoint);
  }
  return x;
}

/// F_l^-1 S_l^T for each spectral label in order.
template <std::floating_point R>
Tensor<std::complex<R>> pad_ifft(Tensor<std::complex<R>> x, std::span<const DimLabel> spectral, const ModeSpec& spec,
                                 std::span<const std::size_t> full) {
  for (std::size_t i = 0; i < spectral.size(); ++i) {
    const DimLabel k = spectral[i];
    if (!is_spectral(k)) throw UnknownLabel("pad_ifft needs spectral labels");
    x = detail::pruned_stage<R>(x, k, to_spatial(k), full[i], detail::modes_for(spec, k),
                                detail::PrunedKind::pad_inverse);
  }
  return x;
}

/// Adjoint of pad_ifft: S_l (F_l^-1)^T in reverse order.
template <std::floating_point R>
Tensor<std::complex<R>> pad_ifft_adjoint(Tensor<std::complex<R>> x, std::span<const DimLabel> spectral,
                                         const ModeSpec& spec) {
  for (std::size_t i = spectral.size(); i-- > 0;) {
    const DimLabel k = spectral[i];
    const DimLabel l = to_spatial(k);
    x = detail::pruned_stage<R>(x, l, k, x.extent(x.axis(l)), detail::modes_for(spec, k),
                                detail::PrunedKind::pad_inverse_adjoint);
  }
  return x;
}

}  // namespace tpfno
