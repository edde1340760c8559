// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file model.hpp
/// Model-parallel FNO. Activations are distributed along x; spectral weights
/// are sharded along ky. One block runs
///
///   S_x F_x R_{x->ky} S_yzt F_yzt   (distributed FFT + truncation)
///   einsum over c_i with the local ky shard
///   F_yzt^-1 S_yzt^T R_{ky->x} F_x^-1 S_x^T
///
/// so exactly two re-partitions move data per block in the forward pass, and
/// each carries the yzt-truncated spectrum. The backward pass applies the
/// adjoint of every stage in reverse (two more re-partitions per block).
/// The real part is taken after the last inverse transform.

#include "tpfno/comm/communicator.hpp"
#include "tpfno/fno/params.hpp"

namespace tpfno {

template <RealScalar R>
struct BlockCache {
  Tensor<R> pre;                       ///< block output before sigma, x-distributed
  Tensor<std::complex<R>> spectral_in; ///< einsum input, ky-distributed
};

template <RealScalar R>
struct ForwardCache {
  Tensor<R> input;
  Tensor<R> encoder_w;  ///< broadcast copies used in this pass
  Tensor<R> decoder_w;
  Tensor<R> encoder_pre;
  std::vector<Tensor<R>> block_in;  ///< h_i feeding block i
  std::vector<BlockCache<R>> blocks;
  Tensor<R> decoder_pre;
};

template <RealScalar R>
struct FnoGradients {
  Tensor<R> input;      ///< dL/dX, x-distributed
  FnoParams<R> params;  ///< encoder/decoder grads summed onto rank 0 (empty elsewhere); spectral grads rank-local
};

template <RealScalar R>
class DistributedFno {
 public:
  using C = std::complex<R>;

  DistributedFno(FnoConfig cfg, Communicator& comm)
      : cfg_(std::move(cfg)), comm_(&comm), xpart_(init_x()), kypart_(cfg_.ky_partition()), spec_(cfg_.mode_spec()) {
    if (cfg_.num_ranks != comm.size()) throw ConfigError("config P differs from communicator size");
  }

  const FnoConfig& config() const noexcept { return cfg_; }
  Communicator& comm() noexcept { return *comm_; }
  const Partition& x_partition() const noexcept { return xpart_; }
  const Partition& ky_partition() const noexcept { return kypart_; }

  /// Channel mix with a broadcast weight: sigma(X W), no other traffic.
  Tensor<R> encoder_forward(const Tensor<R>& x_local, const Tensor<R>& w, ForwardCache<R>* cache = nullptr) {
    auto wb = comm_->broadcast(w, 0, 0);
    auto pre = einsum_channel_mix(x_local, wb);
    auto h = activate(cfg_.activation, pre);
    if (cache) {
      cache->encoder_w = std::move(wb);
      cache->encoder_pre = std::move(pre);
    }
    return h;
  }

  Tensor<R> decoder_forward(const Tensor<R>& h_local, const Tensor<R>& w, ForwardCache<R>* cache = nullptr) {
    auto wb = comm_->broadcast(w, 0, decoder_layer());
    auto pre = einsum_channel_mix(h_local, wb);
    auto y = activate(cfg_.activation, pre);
    if (cache) {
      cache->decoder_w = std::move(wb);
      cache->decoder_pre = std::move(pre);
    }
    return y;
  }

  /// One distributed spectral block; input and output are x-distributed,
  /// output is before the activation.
  Tensor<R> block_forward(const Tensor<R>& h_local, const Tensor<C>& w_shard, std::size_t block,
                          BlockCache<R>* cache = nullptr) {
    const auto layer = block_layer(block);
    const auto n = cfg_.grid;
    auto z = fft_truncate<R>(to_complex(h_local), kYztFwd, spec_);
    z = comm_->repartition(z, xpart_, kypart_, layer);
    z = fft_truncate<R>(std::move(z), kX, spec_);
    auto y = einsum_spectral(z, w_shard);
    if (cache) cache->spectral_in = std::move(z);
    const std::array<std::size_t, 1> nx{n[0]};
    y = pad_ifft<R>(std::move(y), kKx, spec_, nx);
    y = comm_->repartition(y, kypart_, xpart_, layer);
    const std::array<std::size_t, 3> nyzt{n[1], n[2], n[3]};
    y = pad_ifft<R>(std::move(y), kKyzt, spec_, nyzt);
    auto out = real_part(y);
    if (cache) cache->pre = out;
    return out;
  }

  struct BlockGrad {
    Tensor<R> input;
    Tensor<C> weight;
  };

  /// Adjoint of block_forward given dL/d(pre).
  BlockGrad block_backward(const Tensor<R>& g_pre, const Tensor<C>& w_shard, const BlockCache<R>& cache,
                           std::size_t block) {
    const auto layer = block_layer(block);
    const auto n = cfg_.grid;
    auto g = pad_ifft_adjoint<R>(to_complex(g_pre), kKyzt, spec_);
    g = comm_->repartition(g, xpart_, kypart_, layer);
    g = pad_ifft_adjoint<R>(std::move(g), kKx, spec_);
    BlockGrad out;
    out.weight = einsum_spectral_weight_grad(cache.spectral_in, g);
    auto gz = einsum_spectral_adjoint(g, w_shard);
    const std::array<std::size_t, 1> nx{n[0]};
    gz = fft_truncate_adjoint<R>(std::move(gz), kX, spec_, nx);
    gz = comm_->repartition(gz, kypart_, xpart_, layer);
    const std::array<std::size_t, 3> ntzy{n[3], n[2], n[1]};
    gz = fft_truncate_adjoint<R>(std::move(gz), kYztFwd, spec_, ntzy);
    out.input = real_part(gz);
    return out;
  }

  /// encoder -> num_blocks x sigma(block) -> decoder.
  Tensor<R> forward(const Tensor<R>& x_local, const FnoParams<R>& p, ForwardCache<R>* cache = nullptr) {
    check_input(x_local);
    if (p.spectral.size() != cfg_.num_blocks) throw ConfigError("parameter block count differs from config");
    if (cache) {
      *cache = {};
      cache->input = x_local;
    }
    auto h = encoder_forward(x_local, p.encoder, cache);
    for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
      BlockCache<R> bc;
      if (cache) cache->block_in.push_back(h);
      auto pre = block_forward(h, p.spectral[i], i, cache ? &bc : nullptr);
      h = activate(cfg_.activation, pre);
      if (cache) cache->blocks.push_back(std::move(bc));
    }
    if (cache) cache->block_in.push_back(h);  // decoder input
    return decoder_forward(h, p.decoder, cache);
  }

  /// Reverse-mode pass for upstream gradient `g_local` (x-distributed, out
  /// channels). Encoder/decoder weight gradients are sum-reduced to rank 0,
  /// the adjoint of their broadcast.
  FnoGradients<R> backward(const FnoParams<R>& p, const ForwardCache<R>& cache, const Tensor<R>& g_local) {
    FnoGradients<R> out;
    const Activation act = cfg_.activation;
    auto g = activate_backward(act, cache.decoder_pre, g_local);
    const Tensor<R>& dec_in = cache.block_in.back();
    auto gw_dec = einsum_channel_mix_weight_grad(dec_in, g);
    auto gh = einsum_channel_mix_adjoint(g, cache.decoder_w);

    std::vector<Tensor<C>> gw_spec(cfg_.num_blocks);
    for (std::size_t i = cfg_.num_blocks; i-- > 0;) {
      auto gpre = activate_backward(act, cache.blocks[i].pre, gh);
      auto bg = block_backward(gpre, p.spectral[i], cache.blocks[i], i);
      gh = std::move(bg.input);
      gw_spec[i] = std::move(bg.weight);
    }

    auto ge = activate_backward(act, cache.encoder_pre, gh);
    auto gw_enc = einsum_channel_mix_weight_grad(cache.input, ge);
    out.input = einsum_channel_mix_adjoint(ge, cache.encoder_w);

    out.params.encoder = comm_->reduce_sum(gw_enc, 0, 0);
    out.params.decoder = comm_->reduce_sum(gw_dec, 0, decoder_layer());
    out.params.spectral = std::move(gw_spec);
    return out;
  }

 private:
  static constexpr std::array<DimLabel, 3> kYztFwd{DimLabel::t, DimLabel::z, DimLabel::y};
  static constexpr std::array<DimLabel, 3> kKyzt{DimLabel::ky, DimLabel::kz, DimLabel::kt};
  static constexpr std::array<DimLabel, 1> kX{DimLabel::x};
  static constexpr std::array<DimLabel, 1> kKx{DimLabel::kx};

  Partition init_x() const {
    cfg_.validate();
    return cfg_.x_partition();
  }

  std::uint16_t block_layer(std::size_t i) const { return static_cast<std::uint16_t>(i + 1); }
  std::uint16_t decoder_layer() const { return static_cast<std::uint16_t>(cfg_.num_blocks + 1); }

  void check_input(const Tensor<R>& x) const {
    if (x.dims() != cfg_.local_dims(cfg_.in_channels, comm_->rank())) {
      throw ShapeMismatch("input block " + dims_to_string(x.dims()) + " does not match " +
                          dims_to_string(cfg_.local_dims(cfg_.in_channels, comm_->rank())));
    }
  }

  FnoConfig cfg_;
  Communicator* comm_;
  Partition xpart_;
  Partition kypart_;
  ModeSpec spec_;
};

// ---------------------------------------------------------------------------
// Serial oracle

/// One block on a fully resident tensor: full 4-D FFT, truncation of all
/// four dims, spectral einsum, padding, full inverse FFT.
template <RealScalar R>
Tensor<R> serial_block_forward(const FnoConfig& cfg, const Tensor<R>& h, const Tensor<std::complex<R>>& w) {
  const auto spec = cfg.mode_spec();
  auto z = fft_dims<R>(to_complex(h), kSpatialLabels);
  const std::vector<Dim> full = z.dims();
  z = truncate_modes(z, spec);
  auto y = einsum_spectral(z, w);
  std::vector<Dim> target = full;
  target[1].extent = y.extent(1);
  y = pad_modes(y, spec, target);
  y = ifft_dims<R>(std::move(y), kSpectralLabels);
  return real_part(y);
}

/// Undistributed forward on global tensors; used as the parity oracle.
template <RealScalar R>
Tensor<R> serial_fno_forward(const FnoConfig& cfg, const Tensor<R>& x, const FnoParams<R>& p) {
  if (x.dims() != cfg.global_dims(cfg.in_channels)) throw ShapeMismatch("serial oracle: input shape mismatch");
  auto h = activate(cfg.activation, einsum_channel_mix(x, p.encoder));
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    h = activate(cfg.activation, serial_block_forward(cfg, h, p.spectral.at(i)));
  }
  return activate(cfg.activation, einsum_channel_mix(h, p.decoder));
}

/// Global parameters assembled on rank 0 (spectral shards gathered along ky).
template <RealScalar R>
FnoParams<R> gather_params(Communicator& comm, const FnoConfig& cfg, const FnoParams<R>& local) {
  FnoParams<R> g;
  g.encoder = local.encoder;
  g.decoder = local.decoder;
  const auto ky = cfg.ky_partition();
  for (const auto& w : local.spectral) g.spectral.push_back(comm.gather(w, ky, 0));
  return g;
}

}  // namespace tpfno
