// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tpfno/fno/model.hpp"

namespace tpfno {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for one flat parameter vector.
template <std::floating_point R>
struct AdamSlot {
  std::vector<R> m, v;

  void step(std::span<R> param, std::span<const R> grad, double lr, const AdamConfig& c, std::uint64_t t) {
    if (m.empty()) {
      m.assign(param.size(), R(0));
      v.assign(param.size(), R(0));
    }
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = static_cast<R>(c.beta1 * m[i] + (1.0 - c.beta1) * grad[i]);
      v[i] = static_cast<R>(c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param[i] = static_cast<R>(param[i] - lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
};

/// Complex spectral weights are optimized as independent (re, im) pairs.
template <class T>
auto as_real_span(std::span<T> s) {
  using V = std::remove_const_t<T>;
  if constexpr (scalar_traits<V>::is_complex) {
    using Out = std::conditional_t<std::is_const_v<T>, const real_t<V>, real_t<V>>;
    return std::span<Out>(reinterpret_cast<Out*>(s.data()), 2 * s.size());
  } else {
    return s;
  }
}

template <RealScalar R>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  AdamSlot<R> encoder, decoder;
  std::vector<AdamSlot<R>> spectral;
};

template <RealScalar R>
void adam_update(FnoParams<R>& p, const FnoParams<R>& g, AdamState<R>& s, double lr) {
  ++s.step;
  s.spectral.resize(p.spectral.size());
  s.encoder.step(p.encoder.data(), g.encoder.data(), lr, s.config, s.step);
  s.decoder.step(p.decoder.data(), g.decoder.data(), lr, s.config, s.step);
  for (std::size_t i = 0; i < p.spectral.size(); ++i) {
    auto gs = as_real_span(std::span<const std::complex<R>>(g.spectral[i].data()));
    s.spectral[i].step(as_real_span(p.spectral[i].data()), gs, lr, s.config, s.step);
  }
}

/// Mean squared error over every global output element; identical on all
/// ranks.
template <RealScalar R>
double global_mse(Communicator& comm, const FnoConfig& cfg, const Tensor<R>& pred, const Tensor<R>& target) {
  if (pred.dims() != target.dims()) throw ShapeMismatch("prediction and target shapes differ");
  double local = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    local += d * d;
  }
  const double total = static_cast<double>(element_count(cfg.global_dims(cfg.out_channels)));
  return comm.allreduce_sum(local) / total;
}

/// One optimization step on a batch partitioned along x. Returns the loss
/// before the update. Replicated weights are checked to stay bit-identical.
template <RealScalar R>
double train_step(DistributedFno<R>& model, FnoParams<R>& params, AdamState<R>& opt, const Tensor<R>& x_local,
                  const Tensor<R>& y_local, double lr) {
  auto& comm = model.comm();
  const auto& cfg = model.config();
  ForwardCache<R> cache;
  auto pred = model.forward(x_local, params, &cache);
  if (pred.dims() != y_local.dims()) throw ShapeMismatch("target block shape mismatch");
  const double loss = global_mse(comm, cfg, pred, y_local);
  if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite loss at step " + std::to_string(opt.step + 1));

  const R scale = static_cast<R>(2.0 / static_cast<double>(element_count(cfg.global_dims(cfg.out_channels))));
  Tensor<R> g(pred.dims());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (pred[i] - y_local[i]);
  auto grads = model.backward(params, cache, g);

  // Root holds the summed replicated-weight gradients; share them so every
  // rank applies the identical update.
  auto& gp = grads.params;
  gp.encoder = comm.broadcast(comm.rank() == 0 ? gp.encoder : Tensor<R>(params.encoder.dims()), 0, 0);
  gp.decoder = comm.broadcast(comm.rank() == 0 ? gp.decoder : Tensor<R>(params.decoder.dims()), 0,
                              static_cast<std::uint16_t>(cfg.num_blocks + 1));
  adam_update(params, gp, opt, lr);
  comm.check_identical(digest(params.decoder, digest(params.encoder)), "replicated encoder/decoder weights");
  return loss;
}

}  // namespace tpfno
