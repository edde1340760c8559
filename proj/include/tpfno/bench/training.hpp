// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file training.hpp
/// Epoch loop over a SyntheticProblem with held-out metrics.

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "tpfno/bench/synthetic.hpp"
#include "tpfno/fno/train.hpp"

namespace tpfno {

struct TrainOptions {
  std::size_t epochs = 50;
  double lr = 1e-2;
  std::uint64_t seed = 42;  ///< parameter init and per-epoch shuffles
  /// Stop after the first epoch whose test R^2 exceeds this; <= 0 runs every epoch.
  double stop_r2 = 0.0;
};

/// Epoch 0 describes the untrained model. train_loss is the median of the
/// per-step losses of the epoch (for epoch 0, per-sample losses at init).
struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_mse = 0.0;
  double test_mae = 0.0;
  double test_r2 = 0.0;
};

template <RealScalar R>
struct TrainResult {
  std::vector<EpochMetrics> epochs;
  FnoParams<R> params;  ///< rank-local
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

/// Fisher-Yates on 0..n-1 driven by mt19937_64, so every platform agrees.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

/// Concatenates [1, ...] tensors along the leading b axis.
template <Scalar T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& parts) {
  std::vector<Dim> dims = parts.front()->dims();
  dims[0].extent = parts.size();
  std::vector<T> data;
  data.reserve(parts.size() * parts.front()->size());
  for (const auto* p : parts) {
    if (p->dims() != parts.front()->dims()) throw ShapeMismatch("stack_batch: sample shapes differ");
    data.insert(data.end(), p->data().begin(), p->data().end());
  }
  return Tensor<T>(std::move(dims), std::move(data));
}

/// Held-out MSE, MAE and R^2 over every element of every test sample.
template <RealScalar R>
EpochMetrics evaluate(DistributedFno<R>& model, const FnoParams<R>& params, std::span<const Tensor<R>> x,
                      std::span<const Tensor<R>> y) {
  Tensor<double> acc({{DimLabel::c, 5}});  // sum r^2, sum |r|, sum y, sum y^2, count
  for (std::size_t s = 0; s < x.size(); ++s) {
    const auto pred = model.forward(x[s], params);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double t = y[s][i];
      const double r = static_cast<double>(pred[i]) - t;
      acc[0] += r * r;
      acc[1] += std::abs(r);
      acc[2] += t;
      acc[3] += t * t;
    }
    acc[4] += static_cast<double>(pred.size());
  }
  acc = model.comm().allreduce_sum(acc);
  EpochMetrics m;
  const double n = acc[4];
  m.test_mse = acc[0] / n;
  m.test_mae = acc[1] / n;
  const double ss_tot = acc[3] - acc[2] * acc[2] / n;
  m.test_r2 = 1.0 - acc[0] / ss_tot;
  return m;
}

/// Trains on the first train_size() samples and evaluates on the rest after
/// every epoch. `cfg.batch` samples form one step; the last partial batch of
/// an epoch is dropped. Collective; identical metrics on every rank.
template <RealScalar R>
TrainResult<R> train_synthetic(Communicator& comm, const FnoConfig& cfg, const SyntheticProblem<R>& problem,
                               const TrainOptions& opt) {
  const std::size_t rank = comm.rank();
  FnoConfig eval_cfg = cfg;
  eval_cfg.batch = 1;
  const Partition xp = cfg.x_partition();
  const auto sample_dims = eval_cfg.global_dims(1);
  Box frame;
  for (const auto& d : sample_dims) frame.ranges.push_back({0, d.extent});
  const Box mine = slab_box(xp, sample_dims, rank);
  std::vector<Tensor<R>> xs, ys;
  for (std::size_t s = 0; s < problem.size(); ++s) {
    if (problem.inputs[s].dims() != sample_dims) throw ShapeMismatch("synthetic sample does not match config");
    xs.push_back(extract_block(problem.inputs[s], frame, mine));
    ys.push_back(extract_block(problem.targets[s], frame, mine));
  }
  const std::size_t n_train = problem.train_size();
  if (n_train < cfg.batch || n_train > problem.size()) throw ConfigError("training split smaller than one batch");
  const std::span<const Tensor<R>> test_x(xs.data() + n_train, xs.size() - n_train);
  const std::span<const Tensor<R>> test_y(ys.data() + n_train, ys.size() - n_train);

  DistributedFno<R> model(cfg, comm);
  DistributedFno<R> eval_model(eval_cfg, comm);
  TrainResult<R> out;
  out.params = init_params<R>(cfg, opt.seed, rank);
  AdamState<R> adam;

  {
    std::vector<double> losses;
    for (std::size_t s = 0; s < n_train; ++s) {
      const auto pred = eval_model.forward(xs[s], out.params);
      losses.push_back(global_mse(comm, eval_cfg, pred, ys[s]));
    }
    EpochMetrics m = evaluate(eval_model, out.params, test_x, test_y);
    m.train_loss = median(std::move(losses));
    out.epochs.push_back(m);
  }

  const std::size_t steps = n_train / cfg.batch;
  for (std::size_t e = 1; e <= opt.epochs; ++e) {
    const auto order = shuffled_indices(n_train, opt.seed + e);
    std::vector<double> losses;
    for (std::size_t k = 0; k < steps; ++k) {
      std::vector<const Tensor<R>*> bx, by;
      for (std::size_t j = 0; j < cfg.batch; ++j) {
        bx.push_back(&xs[order[k * cfg.batch + j]]);
        by.push_back(&ys[order[k * cfg.batch + j]]);
      }
      losses.push_back(train_step(model, out.params, adam, stack_batch(bx), stack_batch(by), opt.lr));
    }
    EpochMetrics m = evaluate(eval_model, out.params, test_x, test_y);
    m.epoch = e;
    m.train_loss = median(std::move(losses));
    out.epochs.push_back(m);
    if (opt.stop_r2 > 0.0 && m.test_r2 > opt.stop_r2) break;
  }
  return out;
}

inline constexpr std::string_view kMetricsCsvHeader = "epoch,train_loss_median,test_mse,test_mae,test_r2";

/// Values printed with 17 significant digits so equal runs give equal files.
inline void write_metrics_csv(std::ostream& os, std::span<const EpochMetrics> rows) {
  os << kMetricsCsvHeader << '\n';
  char buf[160];
  for (const auto& m : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.train_loss, m.test_mse, m.test_mae,
                  m.test_r2);
    os << buf;
  }
}

/// True when the train-loss medians never increase from one epoch to the next.
inline bool medians_monotone(std::span<const EpochMetrics> rows) {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].train_loss > rows[i - 1].train_loss) return false;
  return true;
}

}  // namespace tpfno
