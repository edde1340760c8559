// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file tensor.hpp
/// Dense labeled tensors and the two contraction patterns used by the FNO.
///
/// Every tensor carries an ordered list of (label, extent) pairs and stores
/// its values row-major with the last dimension fastest. Labels are drawn
/// from a fixed alphabet: batch `b`, channel `c`, the spatial-temporal dims
/// `x y z t` and their Fourier counterparts `kx ky kz kt`. Within one tensor
/// labels are unique, except that weight tensors carry the channel label
/// twice (input channel first, output channel second).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "tpfno/errors.hpp"

namespace tpfno {

enum class DimLabel : std::uint8_t { b = 0, c = 1, x = 2, y = 3, z = 4, t = 5, kx = 6, ky = 7, kz = 8, kt = 9 };

inline constexpr std::uint8_t kNumLabels = 10;

constexpr bool is_spectral(DimLabel l) { return static_cast<std::uint8_t>(l) >= 6; }
constexpr bool is_spatial(DimLabel l) {
  auto v = static_cast<std::uint8_t>(l);
  return v >= 2 && v <= 5;
}

/// x -> kx, y -> ky, ...; other labels are returned unchanged.
constexpr DimLabel to_spectral(DimLabel l) {
  return is_spatial(l) ? static_cast<DimLabel>(static_cast<std::uint8_t>(l) + 4) : l;
}
constexpr DimLabel to_spatial(DimLabel l) {
  return is_spectral(l) ? static_cast<DimLabel>(static_cast<std::uint8_t>(l) - 4) : l;
}

constexpr std::string_view label_name(DimLabel l) {
  constexpr std::array<std::string_view, kNumLabels> names{"b", "c", "x", "y", "z", "t", "kx", "ky", "kz", "kt"};
  return names[static_cast<std::uint8_t>(l)];
}

inline std::optional<DimLabel> label_from_code(std::uint8_t code) {
  if (code >= kNumLabels) return std::nullopt;
  return static_cast<DimLabel>(code);
}

struct Dim {
  DimLabel label;
  std::size_t extent;
  friend bool operator==(const Dim&, const Dim&) = default;
};

enum class DType : std::uint8_t { real32 = 0, real64 = 1, complex64 = 2, complex128 = 3 };

constexpr std::string_view dtype_name(DType d) {
  switch (d) {
    case DType::real32: return "real32";
    case DType::real64: return "real64";
    case DType::complex64: return "complex64";
    case DType::complex128: return "complex128";
  }
  return "?";
}

template <class T>
struct scalar_traits;

template <>
struct scalar_traits<float> {
  static constexpr DType dtype = DType::real32;
  static constexpr bool is_complex = false;
  using real_type = float;
};
template <>
struct scalar_traits<double> {
  static constexpr DType dtype = DType::real64;
  static constexpr bool is_complex = false;
  using real_type = double;
};
template <>
struct scalar_traits<std::complex<float>> {
  static constexpr DType dtype = DType::complex64;
  static constexpr bool is_complex = true;
  using real_type = float;
};
template <>
struct scalar_traits<std::complex<double>> {
  static constexpr DType dtype = DType::complex128;
  static constexpr bool is_complex = true;
  using real_type = double;
};

template <class T>
concept Scalar = requires { scalar_traits<T>::dtype; };

template <class T>
concept RealScalar = Scalar<T> && !scalar_traits<T>::is_complex;

template <class T>
concept ComplexScalar = Scalar<T> && scalar_traits<T>::is_complex;

template <Scalar T>
using real_t = typename scalar_traits<T>::real_type;

template <Scalar T>
constexpr T conj_if(T v) {
  if constexpr (scalar_traits<T>::is_complex) {
    return std::conj(v);
  } else {
    return v;
  }
}

inline std::string dims_to_string(std::span<const Dim> dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::string(label_name(dims[i].label)) + "=" + std::to_string(dims[i].extent);
  }
  return s + "]";
}

inline std::size_t element_count(std::span<const Dim> dims) {
  std::size_t n = 1;
  for (const auto& d : dims) n *= d.extent;
  return n;
}

template <Scalar T>
class Tensor {
 public:
  using value_type = T;
  static constexpr DType dtype = scalar_traits<T>::dtype;

  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<Dim> dims) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(element_count(dims_), T{});
  }

  Tensor(std::vector<Dim> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (data_.size() != element_count(dims_)) {
      throw DimensionMismatch("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                              dims_to_string(dims_));
    }
  }

  const std::vector<Dim>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return dims_.at(axis).extent; }
  DimLabel label(std::size_t axis) const { return dims_.at(axis).label; }

  std::vector<std::size_t> shape() const {
    std::vector<std::size_t> s;
    s.reserve(dims_.size());
    for (const auto& d : dims_) s.push_back(d.extent);
    return s;
  }

  std::optional<std::size_t> find_axis(DimLabel l) const {
    for (std::size_t i = 0; i < dims_.size(); ++i)
      if (dims_[i].label == l) return i;
    return std::nullopt;
  }

  std::size_t axis(DimLabel l) const {
    auto a = find_axis(l);
    if (!a) {
      throw UnknownLabel("label '" + std::string(label_name(l)) + "' not present in " + dims_to_string(dims_));
    }
    return *a;
  }

  std::size_t extent_of(DimLabel l) const { return dims_[axis(l)].extent; }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Same values, one axis renamed.
  Tensor relabeled(std::size_t axis, DimLabel l) const& {
    Tensor out = *this;
    out.dims_.at(axis).label = l;
    out.validate_dims();
    return out;
  }
  Tensor relabeled(std::size_t axis, DimLabel l) && {
    dims_.at(axis).label = l;
    validate_dims();
    return std::move(*this);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate_dims() const {
    std::array<int, kNumLabels> seen{};
    for (const auto& d : dims_) {
      if (d.extent == 0) throw DimensionMismatch("zero extent in " + dims_to_string(dims_));
      int& n = seen[static_cast<std::uint8_t>(d.label)];
      ++n;
      const int allowed = d.label == DimLabel::c ? 2 : 1;
      if (n > allowed) throw DimensionMismatch("duplicate label in " + dims_to_string(dims_));
      if constexpr (!scalar_traits<T>::is_complex) {
        if (is_spectral(d.label)) throw DimensionMismatch("spectral label in real tensor " + dims_to_string(dims_));
      }
    }
  }

  std::vector<Dim> dims_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Elementwise helpers

template <RealScalar R>
Tensor<std::complex<R>> to_complex(const Tensor<R>& x) {
  std::vector<std::complex<R>> out(x.data().begin(), x.data().end());
  return Tensor<std::complex<R>>(x.dims(), std::move(out));
}

template <RealScalar R>
Tensor<R> real_part(const Tensor<std::complex<R>>& x) {
  std::vector<Dim> dims = x.dims();
  for (auto& d : dims) d.label = to_spatial(d.label);
  std::vector<R> out(x.size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), [](const auto& v) { return v.real(); });
  return Tensor<R>(std::move(dims), std::move(out));
}

/// Real inner product Re(sum conj(a) b), accumulated in double.
template <Scalar T>
double inner(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw DimensionMismatch("inner: " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if constexpr (scalar_traits<T>::is_complex) {
      acc += static_cast<double>(a[i].real()) * b[i].real() + static_cast<double>(a[i].imag()) * b[i].imag();
    } else {
      acc += static_cast<double>(a[i]) * b[i];
    }
  }
  return acc;
}

/// sum conj(a) b, accumulated in complex<double>.
template <ComplexScalar T>
std::complex<double> inner_complex(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw DimensionMismatch("inner: " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(std::complex<double>(a[i])) * std::complex<double>(b[i]);
  return acc;
}

template <Scalar T>
double norm2(const Tensor<T>& a) {
  return std::sqrt(inner(a, a));
}

/// ||a - b|| / ||b||; zero when both vanish.
template <Scalar T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw DimensionMismatch("relative_error: shapes differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += static_cast<double>(std::norm(a[i] - b[i]));
    den += static_cast<double>(std::norm(b[i]));
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
  return std::sqrt(num / den);
}

/// a * x + y
template <Scalar T>
Tensor<T> axpy(T a, const Tensor<T>& x, const Tensor<T>& y) {
  if (x.dims() != y.dims()) throw DimensionMismatch("axpy: shapes differ");
  Tensor<T> out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * x[i];
  return out;
}

// ---------------------------------------------------------------------------
// Contractions

namespace detail {

inline void require_weight_matrix(std::span<const Dim> w) {
  if (w.size() < 2 || w[0].label != DimLabel::c || w[1].label != DimLabel::c) {
    throw DimensionMismatch("weights must start with two channel dims, got " + dims_to_string(w));
  }
}

struct ChannelSplit {
  std::size_t outer, channels, inner;
};

inline ChannelSplit split_at(std::span<const Dim> dims, std::size_t axis) {
  ChannelSplit s{1, dims[axis].extent, 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i].extent;
  for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i].extent;
  return s;
}

}  // namespace detail

/// Y[..., co, ...] = sum_ci X[..., ci, ...] W[ci, co]; every non-channel dim is
/// carried element-wise.
template <Scalar T>
Tensor<T> einsum_channel_mix(const Tensor<T>& x, const Tensor<T>& w) {
  detail::require_weight_matrix(w.dims());
  if (w.rank() != 2) throw DimensionMismatch("channel-mix weights must be 2-D, got " + dims_to_string(w.dims()));
  const std::size_t ax = x.axis(DimLabel::c);
  const std::size_t ci = w.extent(0), co = w.extent(1);
  if (x.extent(ax) != ci) {
    throw DimensionMismatch("channel extent " + std::to_string(x.extent(ax)) + " does not match weights c_i=" +
                            std::to_string(ci));
  }
  const auto s = detail::split_at(x.dims(), ax);
  std::vector<Dim> out_dims = x.dims();
  out_dims[ax].extent = co;
  Tensor<T> y(std::move(out_dims));
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  T* yp = y.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < ci; ++i) {
      const T* xrow = xp + (o * ci + i) * s.inner;
      for (std::size_t j = 0; j < co; ++j) {
        const T wij = wp[i * co + j];
        T* yrow = yp + (o * co + j) * s.inner;
        for (std::size_t k = 0; k < s.inner; ++k) yrow[k] += xrow[k] * wij;
      }
    }
  }
  return y;
}

/// Adjoint of einsum_channel_mix with respect to X: contracts G with conj(W)^T.
template <Scalar T>
Tensor<T> einsum_channel_mix_adjoint(const Tensor<T>& g, const Tensor<T>& w) {
  detail::require_weight_matrix(w.dims());
  const std::size_t ci = w.extent(0), co = w.extent(1);
  Tensor<T> wt({{DimLabel::c, co}, {DimLabel::c, ci}});
  for (std::size_t i = 0; i < ci; ++i)
    for (std::size_t j = 0; j < co; ++j) wt[j * ci + i] = conj_if(w[i * co + j]);
  return einsum_channel_mix(g, wt);
}

/// Gradient of <G, einsum_channel_mix(X, W)> with respect to W:
/// dW[ci, co] = sum over all other indices of conj(X[.., ci, ..]) G[.., co, ..].
template <Scalar T>
Tensor<T> einsum_channel_mix_weight_grad(const Tensor<T>& x, const Tensor<T>& g) {
  const std::size_t ax = x.axis(DimLabel::c);
  if (g.axis(DimLabel::c) != ax || g.rank() != x.rank()) {
    throw DimensionMismatch("weight grad: channel axes differ");
  }
  for (std::size_t d = 0; d < x.rank(); ++d) {
    if (d != ax && (x.dims()[d] != g.dims()[d])) throw DimensionMismatch("weight grad: non-channel dims differ");
  }
  const auto sx = detail::split_at(x.dims(), ax);
  const std::size_t ci = x.extent(ax), co = g.extent(ax);
  Tensor<T> dw({{DimLabel::c, ci}, {DimLabel::c, co}});
  for (std::size_t o = 0; o < sx.outer; ++o) {
    for (std::size_t i = 0; i < ci; ++i) {
      const T* xrow = x.data().data() + (o * ci + i) * sx.inner;
      for (std::size_t j = 0; j < co; ++j) {
        const T* grow = g.data().data() + (o * co + j) * sx.inner;
        T acc{};
        for (std::size_t k = 0; k < sx.inner; ++k) acc += conj_if(xrow[k]) * grow[k];
        dw[i * co + j] += acc;
      }
    }
  }
  return dw;
}

namespace detail {

/// Validates X = [b, c, s...] against W = [c, c, s...] and returns prod(s).
template <Scalar T>
std::size_t check_spectral_operands(const Tensor<T>& x, const Tensor<T>& w) {
  require_weight_matrix(w.dims());
  if (x.rank() < 2 || x.label(0) != DimLabel::b || x.label(1) != DimLabel::c) {
    throw DimensionMismatch("spectral operand must be [b, c, ...], got " + dims_to_string(x.dims()));
  }
  if (x.rank() != w.rank()) throw DimensionMismatch("spectral operand ranks differ");
  for (std::size_t d = 2; d < x.rank(); ++d) {
    if (x.dims()[d] != w.dims()[d]) {
      throw DimensionMismatch("spectral dims differ: " + dims_to_string(x.dims()) + " vs " + dims_to_string(w.dims()));
    }
  }
  if (x.extent(1) != w.extent(0)) throw DimensionMismatch("spectral einsum: channel extent does not match c_i");
  std::size_t n = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) n *= x.extent(d);
  return n;
}

}  // namespace detail

/// Y[b, co, k] = sum_ci X[b, ci, k] W[ci, co, k]: element-wise in every
/// trailing dim, contracted over the input channel.
template <Scalar T>
Tensor<T> einsum_spectral(const Tensor<T>& x, const Tensor<T>& w) {
  const std::size_t n = detail::check_spectral_operands(x, w);
  const std::size_t nb = x.extent(0), ci = w.extent(0), co = w.extent(1);
  std::vector<Dim> out_dims = x.dims();
  out_dims[1].extent = co;
  Tensor<T> y(std::move(out_dims));
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t i = 0; i < ci; ++i) {
      const T* xr = x.data().data() + (b * ci + i) * n;
      for (std::size_t o = 0; o < co; ++o) {
        const T* wr = w.data().data() + (i * co + o) * n;
        T* yr = y.data().data() + (b * co + o) * n;
        for (std::size_t k = 0; k < n; ++k) yr[k] += xr[k] * wr[k];
      }
    }
  }
  return y;
}

/// Adjoint of einsum_spectral in X: dX[b, ci, k] = sum_co G[b, co, k] conj(W[ci, co, k]).
template <Scalar T>
Tensor<T> einsum_spectral_adjoint(const Tensor<T>& g, const Tensor<T>& w) {
  detail::require_weight_matrix(w.dims());
  const std::size_t nb = g.extent(0), ci = w.extent(0), co = w.extent(1);
  if (g.extent(1) != co) throw DimensionMismatch("spectral adjoint: channel extent does not match c_o");
  std::vector<Dim> out_dims = g.dims();
  out_dims[1].extent = ci;
  Tensor<T> dx(std::move(out_dims));
  const std::size_t n = detail::check_spectral_operands(dx, w);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t i = 0; i < ci; ++i) {
      T* dr = dx.data().data() + (b * ci + i) * n;
      for (std::size_t o = 0; o < co; ++o) {
        const T* gr = g.data().data() + (b * co + o) * n;
        const T* wr = w.data().data() + (i * co + o) * n;
        for (std::size_t k = 0; k < n; ++k) dr[k] += gr[k] * conj_if(wr[k]);
      }
    }
  }
  return dx;
}

/// Gradient in W: dW[ci, co, k] = sum_b conj(X[b, ci, k]) G[b, co, k].
template <Scalar T>
Tensor<T> einsum_spectral_weight_grad(const Tensor<T>& x, const Tensor<T>& g) {
  if (x.rank() != g.rank() || x.extent(0) != g.extent(0)) throw DimensionMismatch("spectral weight grad: shapes differ");
  for (std::size_t d = 2; d < x.rank(); ++d)
    if (x.dims()[d] != g.dims()[d]) throw DimensionMismatch("spectral weight grad: trailing dims differ");
  const std::size_t nb = x.extent(0), ci = x.extent(1), co = g.extent(1);
  std::vector<Dim> wd{{DimLabel::c, ci}, {DimLabel::c, co}};
  std::size_t n = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) {
    wd.push_back(x.dims()[d]);
    n *= x.extent(d);
  }
  Tensor<T> dw(std::move(wd));
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t i = 0; i < ci; ++i) {
      const T* xr = x.data().data() + (b * ci + i) * n;
      for (std::size_t o = 0; o < co; ++o) {
        const T* gr = g.data().data() + (b * co + o) * n;
        T* dr = dw.data().data() + (i * co + o) * n;
        for (std::size_t k = 0; k < n; ++k) dr[k] += conj_if(xr[k]) * gr[k];
      }
    }
  }
  return dw;
}

}  // namespace tpfno
