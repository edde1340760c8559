// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "tpfno/partition.hpp"
#include "tpfno/spectral.hpp"

namespace tpfno {

enum class Activation { relu, gelu, identity };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

/// sigma(u). gelu is the exact erf form.
template <std::floating_point R>
R activate(Activation a, R u) {
  switch (a) {
    case Activation::relu: return u > R(0) ? u : R(0);
    case Activation::gelu: return R(0.5) * u * (R(1) + std::erf(u / std::numbers::sqrt2_v<R>));
    case Activation::identity: return u;
  }
  return u;
}

/// d sigma / du at u.
template <std::floating_point R>
R activate_grad(Activation a, R u) {
  switch (a) {
    case Activation::relu: return u > R(0) ? R(1) : R(0);
    case Activation::gelu: {
      const R cdf = R(0.5) * (R(1) + std::erf(u / std::numbers::sqrt2_v<R>));
      const R pdf = std::exp(R(-0.5) * u * u) / std::sqrt(R(2) * std::numbers::pi_v<R>);
      return cdf + u * pdf;
    }
    case Activation::identity: return R(1);
  }
  return R(1);
}

template <RealScalar R>
Tensor<R> activate(Activation a, const Tensor<R>& x) {
  Tensor<R> y = x;
  for (auto& v : y.data()) v = activate(a, v);
  return y;
}

/// g * sigma'(pre), element-wise.
template <RealScalar R>
Tensor<R> activate_backward(Activation a, const Tensor<R>& pre, const Tensor<R>& g) {
  if (pre.dims() != g.dims()) throw DimensionMismatch("activation backward: shapes differ");
  Tensor<R> out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= activate_grad(a, pre[i]);
  return out;
}

inline constexpr std::array<DimLabel, 4> kSpatialLabels{DimLabel::x, DimLabel::y, DimLabel::z, DimLabel::t};
inline constexpr std::array<DimLabel, 4> kSpectralLabels{DimLabel::kx, DimLabel::ky, DimLabel::kz, DimLabel::kt};

struct FnoConfig {
  std::array<std::size_t, 4> grid{16, 16, 16, 8};  ///< N_x, N_y, N_z, N_t
  std::size_t batch = 1;
  std::size_t in_channels = 2;
  std::size_t width = 4;  ///< hidden channel count c
  std::size_t out_channels = 2;
  std::size_t num_blocks = 4;
  std::array<std::size_t, 4> modes{4, 4, 4, 3};  ///< m_x, m_y, m_z, m_t
  Activation activation = Activation::gelu;
  std::size_t num_ranks = 1;

  /// r_d = min(2 m_d, N_d)
  std::array<std::size_t, 4> retained() const {
    std::array<std::size_t, 4> r{};
    for (std::size_t d = 0; d < 4; ++d) r[d] = retained_extent(grid[d], modes[d]);
    return r;
  }

  ModeSpec mode_spec() const {
    return ModeSpec{{DimLabel::kx, modes[0]}, {DimLabel::ky, modes[1]}, {DimLabel::kz, modes[2]}, {DimLabel::kt, modes[3]}};
  }

  /// Throws ConfigError for malformed values and InfeasiblePartition when a
  /// partitioned extent cannot give every rank a non-empty block.
  void validate() const {
    for (std::size_t d = 0; d < 4; ++d) {
      if (grid[d] == 0) throw ConfigError("grid extents must be positive");
      if (modes[d] == 0) throw ConfigError("mode counts must be positive");
    }
    if (batch == 0 || in_channels == 0 || width == 0 || out_channels == 0) throw ConfigError("channel and batch counts must be positive");
    if (num_blocks == 0) throw ConfigError("num_blocks must be at least 1");
    if (num_ranks == 0) throw ConfigError("num_ranks must be at least 1");
    if (num_ranks > grid[0]) {
      throw InfeasiblePartition("P=" + std::to_string(num_ranks) + " exceeds N_x=" + std::to_string(grid[0]));
    }
    if (num_ranks > retained()[1]) {
      throw InfeasiblePartition("P=" + std::to_string(num_ranks) + " exceeds retained r_y=" + std::to_string(retained()[1]));
    }
  }

  Partition x_partition() const { return Partition(DimLabel::x, grid[0], num_ranks); }
  Partition ky_partition() const { return Partition(DimLabel::ky, retained()[1], num_ranks); }

  /// Global [b, c, x, y, z, t] shape with `channels` channels.
  std::vector<Dim> global_dims(std::size_t channels) const {
    return {{DimLabel::b, batch}, {DimLabel::c, channels}, {DimLabel::x, grid[0]},
            {DimLabel::y, grid[1]}, {DimLabel::z, grid[2]}, {DimLabel::t, grid[3]}};
  }
  std::vector<Dim> local_dims(std::size_t channels, std::size_t rank) const {
    return x_partition().local_dims(global_dims(channels), rank);
  }

  /// Global [c, c, kx, ky, kz, kt] spectral weight shape.
  std::vector<Dim> spectral_weight_dims() const {
    const auto r = retained();
    return {{DimLabel::c, width}, {DimLabel::c, width}, {DimLabel::kx, r[0]},
            {DimLabel::ky, r[1]}, {DimLabel::kz, r[2]}, {DimLabel::kt, r[3]}};
  }

  std::string describe() const {
    std::ostringstream os;
    os << "grid=" << grid[0] << "x" << grid[1] << "x" << grid[2] << "x" << grid[3] << " b=" << batch
       << " c_in=" << in_channels << " width=" << width << " c_out=" << out_channels << " blocks=" << num_blocks
       << " modes=" << modes[0] << "," << modes[1] << "," << modes[2] << "," << modes[3]
       << " act=" << activation_name(activation) << " P=" << num_ranks;
    return os.str();
  }
};

/// Off-rank elements moved by one re-partition of a block, summed over ranks.
struct BlockVolume {
  std::uint64_t truncated = 0;  ///< x -> ky move of the yzt-truncated spectrum
  std::uint64_t naive = 0;      ///< same move without truncation
  double ratio = 1.0;           ///< (N_y N_z N_t) / (r_y r_z r_t)
};

/// Exact count for remainder-first block partitions; reduces to
/// b c N_x r_y r_z r_t (P-1)/P when both partitioned extents divide by P.
inline BlockVolume predicted_block_volume(const FnoConfig& cfg) {
  const auto r = cfg.retained();
  const auto& n = cfg.grid;
  auto off_rank = [&](std::size_t extent_b) {
    const auto xs = block_decompose(n[0], cfg.num_ranks);
    const auto bs = block_decompose(extent_b, cfg.num_ranks);
    std::uint64_t diag = 0;
    for (std::size_t q = 0; q < cfg.num_ranks; ++q) diag += xs[q].size() * bs[q].size();
    return static_cast<std::uint64_t>(n[0]) * extent_b - diag;
  };
  const std::uint64_t bc = cfg.batch * cfg.width;
  BlockVolume v;
  v.truncated = bc * r[2] * r[3] * off_rank(r[1]);
  v.naive = bc * n[2] * n[3] * off_rank(n[1]);
  v.ratio = static_cast<double>(n[1] * n[2] * n[3]) / static_cast<double>(r[1] * r[2] * r[3]);
  return v;
}

}  // namespace tpfno
