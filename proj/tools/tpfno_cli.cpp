// SPDX-License-Identifier: Apache-2.0
// tpfno: parity checks, scaling benchmarks, the synthetic training demo and
// the taskpool demo.
//
// Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "tpfno/bench/parity.hpp"
#include "tpfno/bench/scale.hpp"
#include "tpfno/bench/training.hpp"
#include "tpfno/comm/launch.hpp"
#include "tpfno/fno/checkpoint.hpp"
#include "tpfno/taskpool/pool.hpp"

namespace fs = std::filesystem;
using namespace tpfno;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::size_t workers = 1;
  std::vector<std::size_t> grid{16, 16, 16, 8};
  std::size_t channels = 2;
  std::size_t width = 4;
  std::vector<std::size_t> modes{4, 4, 4, 3};
  std::size_t blocks = 4;
  std::string activation = "gelu";
  std::string dtype = "f64";
  std::uint64_t seed = 42;
  std::string transport = "inproc";
  std::string out;
  // Set on ranks started by the proc transport.
  std::optional<std::size_t> rank;
  std::size_t world_size = 0;
  std::string rendezvous;
};

std::vector<std::string> g_args;  // argv[1..], replayed to proc-transport ranks

void add_common(CLI::App* app, Common& c) {
  app->add_option("--workers", c.workers, "Number of ranks P (taskpool: pool size)");
  app->add_option("--grid", c.grid, "Global extents Nx,Ny,Nz,Nt")->delimiter(',')->expected(4);
  app->add_option("--channels", c.channels, "Input and output channels");
  app->add_option("--width", c.width, "Hidden channels");
  app->add_option("--modes", c.modes, "Retained modes mx,my,mz,mt")->delimiter(',')->expected(4);
  app->add_option("--blocks", c.blocks, "Number of FNO blocks");
  app->add_option("--activation", c.activation, "gelu, relu or identity");
  app->add_option("--dtype", c.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--transport", c.transport, "inproc or proc")->check(CLI::IsMember({"inproc", "proc"}));
  app->add_option("--out", c.out, "CSV output path");
  app->add_option("--rank", c.rank)->group("");
  app->add_option("--world-size", c.world_size)->group("");
  app->add_option("--rendezvous", c.rendezvous)->group("");
}

FnoConfig make_config(const Common& c, std::size_t ranks) {
  FnoConfig cfg;
  std::copy(c.grid.begin(), c.grid.end(), cfg.grid.begin());
  std::copy(c.modes.begin(), c.modes.end(), cfg.modes.begin());
  cfg.in_channels = cfg.out_channels = c.channels;
  cfg.width = c.width;
  cfg.num_blocks = c.blocks;
  cfg.activation = parse_activation(c.activation);
  cfg.num_ranks = ranks;
  cfg.validate();
  return cfg;
}

bool is_rank_process(const Common& c) { return c.rank.has_value(); }

/// Runs body(Communicator&) -> int on `world` ranks and returns the largest
/// exit code. Under the proc transport the parent re-executes this binary
/// with `child_args`; each child lands back here with --rank set.
template <class F>
int collective(const Common& c, std::size_t world, const std::vector<std::string>& child_args, F&& body) {
  if (is_rank_process(c)) {
    if (c.world_size != world) throw ConfigError("--world-size does not match --workers");
    SocketTransport t(*c.rank, c.world_size, c.rendezvous);
    Communicator comm(t, *c.rank, std::chrono::minutes(10));
    return body(comm);
  }
  if (c.transport == "inproc") {
    const auto res = run_inproc(world, body, std::chrono::minutes(10));
    return *std::max_element(res.values.begin(), res.values.end());
  }
  const auto dir = make_rendezvous_dir();
  const int code = launch_processes(fs::read_symlink("/proc/self/exe"), child_args, world, dir);
  fs::remove_all(dir);
  return code;
}

std::ofstream open_csv(const std::string& path) {
  if (!path.empty() && fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  return os;
}

// ---------------------------------------------------------------- parity

template <RealScalar R>
int cmd_parity(const Common& c) {
  const auto cfg = make_config(c, c.workers);
  return collective(c, c.workers, g_args, [&](Communicator& comm) {
    std::vector<SuiteResult> rows;
    rows.push_back(oracle_suite<R>(comm, cfg, c.seed));
    rows.push_back(adjoint_suite(comm, cfg, c.seed));
    rows.push_back(gradient_suite(comm, c.seed));
    rows.push_back(comm_volume_suite(comm, cfg, c.seed));
    bool ok = true;
    for (const auto& r : rows) ok = ok && r.passed();
    if (comm.rank() == 0) {
      std::printf("parity: %s dtype=%s\n", cfg.describe().c_str(), c.dtype.c_str());
      for (const auto& r : rows) {
        std::printf("  %-12s %s  metric=%.3e  tol=%.1e\n", r.name.c_str(), r.passed() ? "PASS" : "FAIL", r.metric,
                    r.tolerance);
        if (!r.passed()) std::printf("    %s\n", r.detail.c_str());
      }
      if (!c.out.empty()) {
        auto os = open_csv(c.out);
        write_parity_csv(os, comm.size(), rows);
      }
    }
    return ok ? kExitOk : kExitFailed;
  });
}

// ---------------------------------------------------------------- scale

struct ScaleOptions {
  std::string mode = "both";
  std::vector<std::size_t> ranks{1, 2, 4};
  std::size_t iterations = 5;
  std::size_t warmup = 1;
  std::string point_out;  // set on proc-transport ranks
};

std::vector<std::string> common_args(const Common& c) {
  auto quad = [](const std::vector<std::size_t>& v) {
    return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + "," + std::to_string(v[3]);
  };
  return {"--grid", quad(c.grid), "--modes", quad(c.modes), "--channels", std::to_string(c.channels),
          "--width", std::to_string(c.width), "--blocks", std::to_string(c.blocks), "--activation", c.activation,
          "--dtype", c.dtype, "--seed", std::to_string(c.seed), "--transport", "proc"};
}

template <RealScalar R>
int cmd_scale(const Common& c, const ScaleOptions& o) {
  std::vector<ScaleMode> modes;
  if (o.mode == "both") {
    modes = {ScaleMode::weak, ScaleMode::strong};
  } else {
    modes = {parse_scale_mode(o.mode)};
  }
  const FnoConfig base = make_config(c, 1);
  for (auto m : modes)
    for (auto p : o.ranks) scale_config(base, m, p);
  if (std::find(o.ranks.begin(), o.ranks.end(), std::size_t{1}) == o.ranks.end() && !is_rank_process(c))
    throw ConfigError("--ranks must include 1 for the efficiency baseline");

  auto point = [&](ScaleMode m, std::size_t p) {
    const auto cfg = scale_config(base, m, p);
    return [&, cfg, m](Communicator& comm) {
      return measure_scale_point<R>(comm, cfg, m, o.iterations, o.warmup, c.seed);
    };
  };

  if (is_rank_process(c)) {
    if (modes.size() != 1 || o.ranks.size() != 1) throw ConfigError("rank processes measure a single point");
    const auto rec = collective(c, o.ranks[0], {}, [&](Communicator& comm) {
      const auto r = point(modes[0], o.ranks[0])(comm);
      if (comm.rank() == 0) {
        auto os = open_csv(o.point_out);
        write_bench_csv(os, std::span(&r, 1));
      }
      return kExitOk;
    });
    return rec;
  }

  std::vector<BenchRecord> recs;
  for (auto m : modes) {
    for (auto p : o.ranks) {
      if (c.transport == "inproc") {
        recs.push_back(run_inproc(p, point(m, p), std::chrono::minutes(10)).values[0]);
      } else {
        const fs::path tmp = make_rendezvous_dir();
        auto args = common_args(c);
        args.insert(args.begin(), "scale");
        args.insert(args.end(), {"--workers", std::to_string(p), "--mode", std::string(scale_mode_name(m)), "--ranks",
                                 std::to_string(p), "--iterations", std::to_string(o.iterations), "--warmup",
                                 std::to_string(o.warmup), "--point-out", (tmp / "point.csv").string()});
        const int code = launch_processes(fs::read_symlink("/proc/self/exe"), args, p, tmp);
        if (code != 0) {
          fs::remove_all(tmp);
          return code;
        }
        std::ifstream in(tmp / "point.csv");
        std::string header, row;
        std::getline(in, header);
        std::getline(in, row);
        recs.push_back(parse_bench_row(row));
        fs::remove_all(tmp);
      }
      const auto& r = recs.back();
      std::printf("%-6s P=%zu  fwd %.4fs  fwd+bwd %.4fs  moved %llu elements\n", std::string(scale_mode_name(m)).c_str(),
                  p, r.forward_s, r.forward_backward_s, static_cast<unsigned long long>(r.comm_elements));
    }
  }
  assign_efficiency(recs);
  if (c.out.empty()) {
    write_bench_csv(std::cout, recs);
  } else {
    auto os = open_csv(c.out);
    write_bench_csv(os, recs);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::size_t epochs = 50;
  double lr = 1e-2;
  std::size_t train = 200;
  std::size_t test = 50;
  double target_r2 = 0.0;
  std::size_t batch = 1;
  std::string checkpoint;
};

template <RealScalar R>
int cmd_train(const Common& c, const TrainFlags& f) {
  FnoConfig cfg = make_config(c, c.workers);
  if (cfg.in_channels != 1) throw ConfigError("train uses single-channel fields; pass --channels 1");
  cfg.batch = f.batch;
  cfg.validate();
  if (f.train == 0 || f.test == 0) throw ConfigError("--train and --test must be positive");
  if (f.train % f.batch != 0) throw ConfigError("--train must be a multiple of --batch");
  const auto problem = make_synthetic<R>(SyntheticSpec{cfg, c.seed, f.train, f.test});
  const TrainOptions opt{f.epochs, f.lr, c.seed, f.target_r2};

  return collective(c, c.workers, g_args, [&](Communicator& comm) {
    const auto res = train_synthetic<R>(comm, cfg, problem, opt);
    const auto global = gather_params(comm, cfg, res.params);
    if (comm.rank() != 0) return kExitOk;
    std::printf("%5s  %12s  %12s  %12s  %9s\n", "epoch", "train_loss", "test_mse", "test_mae", "test_r2");
    for (const auto& m : res.epochs)
      std::printf("%5zu  %12.5e  %12.5e  %12.5e  %9.5f\n", m.epoch, m.train_loss, m.test_mse, m.test_mae, m.test_r2);
    if (!c.out.empty()) {
      auto os = open_csv(c.out);
      write_metrics_csv(os, res.epochs);
    }
    if (!f.checkpoint.empty()) save_checkpoint(f.checkpoint, CheckpointInfo{cfg, c.seed}, global);
    if (f.target_r2 > 0.0 && !(res.epochs.back().test_r2 > f.target_r2)) {
      std::printf("held-out R^2 %.5f did not reach %.5f\n", res.epochs.back().test_r2, f.target_r2);
      return kExitFailed;
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------- taskpool

struct TaskpoolFlags {
  std::size_t tasks = 2048;
  std::size_t repeats = 5;
  double sleep = 2.0;
  std::string store;
  std::string sleep_out;
};

fs::path default_store_root() {
  const std::string leaf = "tpfno-store-" + std::to_string(::getpid());
  // tmpfs when available.
  if (fs::is_directory("/dev/shm")) return fs::path("/dev/shm") / leaf;
  return fs::temp_directory_path() / leaf;
}

int cmd_taskpool(const Common& c, const TaskpoolFlags& f) {
  if (f.tasks == 0) throw ConfigError("--tasks must be positive");
  std::vector<std::size_t> sizes;
  if (f.tasks < 16) {
    sizes.push_back(f.tasks);
  } else {
    for (std::size_t n = 16; n <= f.tasks; n *= 2) sizes.push_back(n);
  }
  const fs::path root = f.store.empty() ? default_store_root() : fs::path(f.store);
  const bool owns_root = f.store.empty();
  {
    TaskPool pool(root, c.workers);
    const auto pts = submission_sweep(pool, sizes, f.repeats);
    {
      auto os = c.out.empty() ? std::ofstream() : open_csv(c.out);
      std::ostream& out = c.out.empty() ? std::cout : os;
      out << "n,workers,submit_s\n";
      for (const auto& p : pts) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", p.tasks, c.workers, p.submit_seconds);
        out << buf;
      }
    }
    std::vector<double> x, y;
    for (const auto& p : pts)
      if (p.tasks >= 64) x.push_back(static_cast<double>(p.tasks)), y.push_back(p.submit_seconds);
    if (x.size() >= 2) {
      const auto fit = linear_fit(x, y);
      std::printf("submit time ~ %.3e + %.3e n  (R^2 %.4f over n >= 64)\n", fit.intercept, fit.slope, fit.r2);
    }
    if (f.sleep > 0.0) {
      const auto d = sleep_demo(pool, c.workers, f.sleep);
      std::printf("sleep demo: %zu x %.2fs tasks on %zu workers, makespan %.4fs, efficiency %.4f\n", c.workers,
                  f.sleep, c.workers, d.makespan, d.efficiency);
      if (!f.sleep_out.empty()) {
        auto os = open_csv(f.sleep_out);
        os << "tasks,workers,task_s,sum_task_s,makespan_s,efficiency\n";
        double sum = 0;
        for (double t : d.durations) sum += t;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", d.durations.size(), c.workers, f.sleep, sum,
                      d.makespan, d.efficiency);
        os << buf;
      }
    }
  }
  if (owns_root) fs::remove_all(root);
  return kExitOk;
}

template <class F>
int with_dtype(const Common& c, F&& f) {
  return c.dtype == "f32" ? f(float{}) : f(double{});
}

}  // namespace

int main(int argc, char** argv) {
  g_args.assign(argv + 1, argv + argc);
  CLI::App app{"Tensor-parallel Fourier neural operator toolkit"};
  app.require_subcommand(1);

  Common parity_c, scale_c, train_c, pool_c;
  train_c.channels = 1;
  pool_c.workers = 8;

  auto* parity = app.add_subcommand("parity", "Oracle, adjoint, gradient and comm-volume checks");
  add_common(parity, parity_c);

  ScaleOptions scale_o;
  auto* scale = app.add_subcommand("scale", "Weak and strong scaling benchmark");
  add_common(scale, scale_c);
  scale->add_option("--mode", scale_o.mode, "weak, strong or both")->check(CLI::IsMember({"weak", "strong", "both"}));
  scale->add_option("--ranks", scale_o.ranks, "Worker counts to measure")->delimiter(',');
  scale->add_option("--iterations", scale_o.iterations, "Timed iterations per point");
  scale->add_option("--warmup", scale_o.warmup, "Discarded iterations per point");
  scale->add_option("--point-out", scale_o.point_out)->group("");

  TrainFlags train_f;
  auto* train = app.add_subcommand("train", "Train on the synthetic spectral-propagator problem");
  add_common(train, train_c);
  train->add_option("--epochs", train_f.epochs, "Maximum epochs");
  train->add_option("--lr", train_f.lr, "Adam learning rate");
  train->add_option("--train", train_f.train, "Training samples");
  train->add_option("--test", train_f.test, "Held-out samples");
  train->add_option("--target-r2", train_f.target_r2, "Stop once held-out R^2 exceeds this; 0 runs every epoch");
  train->add_option("--batch", train_f.batch, "Samples per step");
  train->add_option("--checkpoint", train_f.checkpoint, "Directory for the trained parameters");

  TaskpoolFlags pool_f;
  auto* pool = app.add_subcommand("taskpool", "Submission-time sweep and sleep-task efficiency demo");
  add_common(pool, pool_c);
  pool->add_option("--tasks", pool_f.tasks, "Largest job size in the sweep");
  pool->add_option("--repeats", pool_f.repeats, "Submissions per size (median kept)");
  pool->add_option("--sleep", pool_f.sleep, "Seconds per sleep task; 0 skips the demo");
  pool->add_option("--store", pool_f.store, "Object store directory");
  pool->add_option("--sleep-out", pool_f.sleep_out, "CSV path for the sleep demo");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*parity) return with_dtype(parity_c, [&](auto r) { return cmd_parity<decltype(r)>(parity_c); });
    if (*scale) return with_dtype(scale_c, [&](auto r) { return cmd_scale<decltype(r)>(scale_c, scale_o); });
    if (*train) return with_dtype(train_c, [&](auto r) { return cmd_train<decltype(r)>(train_c, train_f); });
    if (*pool) return cmd_taskpool(pool_c, pool_f);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const InfeasiblePartition& e) {
    std::fprintf(stderr, "infeasible partition: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailed;
  }
  return kExitUsage;
}
