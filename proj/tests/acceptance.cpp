// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include "tpfno/bench/parity.hpp"
#include "tpfno/bench/scale.hpp"
#include "tpfno/bench/training.hpp"
#include "tpfno/comm/launch.hpp"
#include "tpfno/fno/checkpoint.hpp"
#include "tpfno/taskpool/pool.hpp"

#ifndef TPFNO_CLI_PATH
#error "TPFNO_CLI_PATH must name the tpfno executable"
#endif

namespace fs = std::filesystem;
using namespace tpfno;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::string summary;
  std::string artifact;  // numerical output compared across runs
};

int g_failures = 0;

void report(int id, const std::string& title, const Verdict& v, Clock::time_point t0) {
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("CRITERION %d %s  %s: %s  [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", title.c_str(), v.summary.c_str(),
              secs);
  std::fflush(stdout);
  if (!v.pass) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string hex_of(const Bytes& b) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::byte v : b) h = (h ^ std::to_integer<std::uint8_t>(v)) * 1099511628211ull;
  return fmt("%016llx:%zu", static_cast<unsigned long long>(h), b.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Concatenated files of a directory, in name order.
std::string dir_blob(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir)) files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += f.filename().string() + ":" + slurp(f) + "\n";
  return out;
}

int run_cli(const std::vector<std::string>& args) {
  std::string cmd = TPFNO_CLI_PATH;
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " > /dev/null";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

FnoConfig parity_config(std::size_t p) {
  FnoConfig c;
  c.grid = {16, 16, 16, 8};
  c.modes = {4, 4, 4, 3};
  c.in_channels = c.out_channels = 2;
  c.width = 4;
  c.num_blocks = 4;
  c.num_ranks = p;
  return c;
}

std::vector<std::size_t> rank_counts() {
  std::vector<std::size_t> ps{1, 2, 4};
  if (std::thread::hardware_concurrency() >= 8) ps.push_back(8);
  return ps;
}

// b * c * N_x * r_y * r_z * r_t * (P - 1) / P, for P dividing N_x and r_y.
std::uint64_t even_split_volume(const FnoConfig& c) {
  const std::uint64_t r[4] = {std::min<std::uint64_t>(2 * c.modes[0], c.grid[0]), std::min<std::uint64_t>(2 * c.modes[1], c.grid[1]),
                              std::min<std::uint64_t>(2 * c.modes[2], c.grid[2]), std::min<std::uint64_t>(2 * c.modes[3], c.grid[3])};
  return c.batch * c.width * c.grid[0] * r[1] * r[2] * r[3] * (c.num_ranks - 1) / c.num_ranks;
}

// ------------------------------------------------------------ 1: oracle parity

template <RealScalar R>
double parity_error(std::size_t p, std::string& artifact) {
  const auto cfg = parity_config(p);
  const auto x = detail::seeded_tensor<R>(cfg.global_dims(cfg.in_channels), 1001);
  const auto g = detail::global_init<R>(cfg, 1002);
  const auto res = run_inproc(p, [&](Communicator& comm) {
    DistributedFno<R> model(cfg, comm);
    const auto y = model.forward(detail::slab_of(x, cfg.x_partition(), comm.rank()), detail::local_view(g, cfg, comm.rank()));
    return comm.gather(y, cfg.x_partition());
  });
  const auto& full = res.values[0];
  artifact += hex_of(encode_tensor(full)) + ";";
  return relative_error(full, serial_fno_forward(cfg, x, g));
}

Verdict criterion_oracle() {
  Verdict v;
  std::string parts;
  for (std::size_t p : rank_counts()) {
    const double e64 = parity_error<double>(p, v.artifact);
    const double e32 = parity_error<float>(p, v.artifact);
    v.pass = v.pass && e64 <= 1e-10 && e32 <= 1e-4;
    parts += fmt("P=%zu f64 %.2e f32 %.2e; ", p, e64, e32);
  }
  if (std::thread::hardware_concurrency() < 8)
    parts += fmt("P=8 not run (%u logical CPUs)", std::thread::hardware_concurrency());
  v.summary = parts;
  return v;
}

// ------------------------------------------------------------ 2: adjoints

Verdict criterion_adjoint() {
  Verdict v;
  for (std::size_t p : {2u, 4u}) {
    const auto res = run_inproc(p, [&](Communicator& comm) { return adjoint_suite(comm, parity_config(p), 77, 20); });
    const auto& s = res.values[0];
    v.pass = v.pass && s.metric <= 1e-12;
    v.summary += fmt("P=%zu worst relative gap %.2e over 20 pairs each of S, F, R, B; ", p, s.metric);
    v.artifact += fmt("%.17g;", s.metric);
  }
  return v;
}

// ------------------------------------------------------------ 3: gradients

Verdict criterion_gradient() {
  const auto res = run_inproc(2, [&](Communicator& comm) { return gradient_suite(comm, 99, 20); });
  const auto& s = res.values[0];
  Verdict v;
  v.pass = s.metric < 1e-5;
  v.summary = fmt("max relative error %.2e over 20 directions (f64, P=2)", s.metric);
  v.artifact = fmt("%.17g", s.metric);
  return v;
}

// ------------------------------------------------------------ 4: comm volume

struct Moved {
  std::uint64_t elements = 0;
  std::uint64_t calls = 0;  // per rank
};

Moved forward_traffic(const FnoConfig& cfg) {
  const auto res = run_inproc(cfg.num_ranks, [&](Communicator& comm) {
    DistributedFno<double> model(cfg, comm);
    const auto x = detail::seeded_tensor<double>(cfg.local_dims(cfg.in_channels, comm.rank()), 5 + comm.rank());
    const auto params = init_params<double>(cfg, 6, comm.rank());
    const auto before = comm.comm_report();
    model.forward(x, params);
    return (comm.comm_report() - before)[Primitive::repartition];
  });
  Moved m;
  m.calls = res.values[0].calls;
  for (const auto& r : res.values) {
    m.elements += r.elements;
    if (r.calls != m.calls) m.calls = 0;
  }
  return m;
}

Verdict criterion_comm() {
  Verdict v;
  for (std::size_t p : {2u, 4u}) {
    const auto cfg = parity_config(p);
    const auto m = forward_traffic(cfg);
    const std::uint64_t expect = even_split_volume(cfg);
    const bool ok = m.calls == 2 * cfg.num_blocks && m.elements == 2 * cfg.num_blocks * expect &&
                    predicted_block_volume(cfg).truncated == expect;
    v.pass = v.pass && ok;
    v.summary += fmt("P=%zu %llu elements per re-partition (closed form %llu), %llu re-partitions per block; ", p,
                     static_cast<unsigned long long>(m.elements / (2 * cfg.num_blocks)),
                     static_cast<unsigned long long>(expect),
                     static_cast<unsigned long long>(m.calls / cfg.num_blocks));
    v.artifact += fmt("%llu,%llu;", static_cast<unsigned long long>(m.elements), static_cast<unsigned long long>(m.calls));
  }
  // 20% retention per dim: measured truncated vs untruncated traffic.
  FnoConfig t;
  t.grid = {20, 20, 20, 20};
  t.modes = {2, 2, 2, 2};
  t.in_channels = t.out_channels = t.width = 1;
  t.num_blocks = 1;
  t.num_ranks = 2;
  FnoConfig u = t;
  u.modes = {10, 10, 10, 10};
  const auto mt = forward_traffic(t), mu = forward_traffic(u);
  const bool ratio_ok = mu.elements == 125 * mt.elements && predicted_block_volume(t).ratio == 125.0;
  v.pass = v.pass && ratio_ok;
  v.summary += fmt("20%% retention: untruncated/truncated traffic %llu/%llu = %.6g (predicted %.6g)",
                   static_cast<unsigned long long>(mu.elements), static_cast<unsigned long long>(mt.elements),
                   static_cast<double>(mu.elements) / static_cast<double>(mt.elements), predicted_block_volume(t).ratio);
  v.artifact += fmt("%llu,%llu", static_cast<unsigned long long>(mt.elements), static_cast<unsigned long long>(mu.elements));
  return v;
}

// ------------------------------------------------------------ 5: training

struct TrainSetup {
  FnoConfig cfg;
  TrainOptions opt;
  std::size_t train = 200, test = 50;
};

TrainSetup train_setup() {
  TrainSetup s;
  s.cfg = parity_config(2);
  s.cfg.in_channels = s.cfg.out_channels = 1;
  s.opt = TrainOptions{50, 1e-2, 42, 0.98};
  return s;
}

Verdict criterion_training(const fs::path& work) {
  const auto s = train_setup();
  const auto problem = make_synthetic<double>(SyntheticSpec{s.cfg, 42, s.train, s.test});
  const auto res = run_inproc(2, [&](Communicator& comm) {
    const auto r = train_synthetic<double>(comm, s.cfg, problem, s.opt);
    const auto global = gather_params(comm, s.cfg, r.params);
    if (comm.rank() == 0) save_checkpoint(work / "checkpoint", CheckpointInfo{s.cfg, 42}, global);
    return r.epochs;
  });
  const auto& epochs = res.values[0];
  std::ofstream(work / "metrics.csv", std::ios::binary) << [&] {
    std::ostringstream os;
    write_metrics_csv(os, epochs);
    return os.str();
  }();
  const double r2 = epochs.back().test_r2;
  Verdict v;
  v.pass = r2 > 0.95 && epochs.size() <= 51 && medians_monotone(epochs);
  std::string medians;
  for (const auto& e : epochs) medians += fmt("%s%.3e", medians.empty() ? "" : " ", e.train_loss);
  v.summary = fmt("held-out R^2 %.4f after %zu epochs; train-loss medians %s (%s)", r2, epochs.size() - 1,
                  medians.c_str(), medians_monotone(epochs) ? "monotone" : "NOT monotone");
  v.artifact = slurp(work / "metrics.csv");
  v.artifact += dir_blob(work / "checkpoint");
  return v;
}

// ------------------------------------------------------------ 6: scaling harness

Verdict criterion_scale(const fs::path& work) {
  Verdict v;
  const auto csv = work / "scale.csv";
  const std::size_t iters = 5;
  const int code = run_cli({"scale", "--mode", "both", "--ranks", "1,2,4", "--iterations", std::to_string(iters), "--out",
                            csv.string()});
  const std::string text = slurp(csv);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  bool ok = code == 0 && line == kBenchCsvHeader && text.find('\r') == std::string::npos;
  std::size_t rows = 0;
  double lo = 1e300, hi = 0;
  for (; std::getline(in, line); ++rows) {
    if (std::count(line.begin(), line.end(), ',') != 10) {
      ok = false;
      continue;
    }
    const auto r = parse_bench_row(line);
    FnoConfig cfg = parity_config(r.num_ranks);
    if (r.mode == ScaleMode::weak) cfg.grid[0] *= r.num_ranks;
    const std::uint64_t elements = 2 * cfg.num_blocks * iters * even_split_volume(cfg);
    ok = ok && r.efficiency > 0 && r.efficiency <= 1.5 && r.comm_elements == elements &&
         r.comm_bytes == elements * sizeof(std::complex<double>) && (r.num_ranks != 1 || r.efficiency == 1.0);
    lo = std::min(lo, r.efficiency), hi = std::max(hi, r.efficiency);
  }
  v.pass = ok && rows == 6;
  v.summary = fmt("exit %d, %zu rows (weak+strong, P=1,2,4), efficiency in [%.3f, %.3f], comm columns match closed form",
                  code, rows, lo, hi);
  return v;
}

// ------------------------------------------------------------ 7: taskpool

Verdict criterion_taskpool() {
  const fs::path root = (fs::is_directory("/dev/shm") ? fs::path("/dev/shm") : fs::temp_directory_path()) /
                        ("tpfno-acceptance-" + std::to_string(::getpid()));
  Verdict v;
  {
    TaskPool pool(root, 8);
    const std::vector<std::size_t> sizes{16, 32, 64, 128, 256, 512, 1024, 2048};
    const auto pts = submission_sweep(pool, sizes, 5);
    std::vector<double> x, y;
    for (const auto& p : pts)
      if (p.tasks >= 64) x.push_back(static_cast<double>(p.tasks)), y.push_back(p.submit_seconds);
    const auto fit = linear_fit(x, y);
    const double ratio = pts[7].submit_seconds / pts[6].submit_seconds;
    const auto demo = sleep_demo(pool, 8, 2.0);
    v.pass = fit.r2 > 0.9 && ratio >= 1.5 && ratio <= 2.5 && demo.efficiency > 0.9;
    v.summary = fmt("sweep fit R^2 %.4f (n >= 64), t(2048)/t(1024) %.3f; 8 x 2 s sleep tasks on 8 workers: "
                    "makespan %.3f s, efficiency %.4f",
                    fit.r2, ratio, demo.makespan, demo.efficiency);
  }
  fs::remove_all(root);
  return v;
}

// ------------------------------------------------------------ 8: determinism

Verdict criterion_determinism(const std::vector<std::string>& first, const fs::path& work) {
  Verdict v;
  std::vector<std::string> second;
  second.push_back(criterion_oracle().artifact);
  second.push_back(criterion_adjoint().artifact);
  second.push_back(criterion_gradient().artifact);
  second.push_back(criterion_comm().artifact);
  // Training again, this time through the command-line tool in a fresh process.
  const auto s = train_setup();
  const auto rerun = work / "rerun";
  const int code = run_cli({"train", "--workers", "2", "--channels", "1", "--width", std::to_string(s.cfg.width),
                            "--blocks", std::to_string(s.cfg.num_blocks), "--grid", "16,16,16,8", "--modes", "4,4,4,3",
                            "--seed", "42", "--train", "200", "--test", "50", "--epochs", "50", "--lr", "0.01",
                            "--target-r2", "0.98", "--out", (rerun / "metrics.csv").string(), "--checkpoint",
                            (rerun / "checkpoint").string()});
  std::string t = slurp(rerun / "metrics.csv");
  if (code == 0) t += dir_blob(rerun / "checkpoint");
  second.push_back(t);

  const char* names[5] = {"oracle outputs", "adjoint gaps", "gradient errors", "comm counts", "training metrics+checkpoint"};
  std::string diffs;
  for (std::size_t i = 0; i < 5; ++i)
    if (first[i] != second[i]) diffs += std::string(diffs.empty() ? "" : ", ") + names[i];
  v.pass = code == 0 && diffs.empty();
  v.summary = diffs.empty() ? fmt("criteria 1-5 artifacts bit-identical on rerun (training rerun via CLI, exit %d)", code)
                            : "differing: " + diffs;
  return v;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("tpfno-acceptance-work-" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  std::vector<std::string> artifacts;
  try {
    auto t0 = Clock::now();
    auto v = criterion_oracle();
    report(1, "oracle parity", v, t0);
    artifacts.push_back(v.artifact);

    t0 = Clock::now();
    v = criterion_adjoint();
    report(2, "adjoint identities", v, t0);
    artifacts.push_back(v.artifact);

    t0 = Clock::now();
    v = criterion_gradient();
    report(3, "gradient check", v, t0);
    artifacts.push_back(v.artifact);

    t0 = Clock::now();
    v = criterion_comm();
    report(4, "communication accounting", v, t0);
    artifacts.push_back(v.artifact);

    t0 = Clock::now();
    v = criterion_training(work);
    report(5, "training property", v, t0);
    artifacts.push_back(v.artifact);

    t0 = Clock::now();
    report(6, "scaling harness", criterion_scale(work), t0);

    t0 = Clock::now();
    report(7, "taskpool", criterion_taskpool(), t0);

    t0 = Clock::now();
    report(8, "determinism", criterion_determinism(artifacts, work), t0);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    ++g_failures;
  }
  fs::remove_all(work);
  std::printf("%s: %d criterion failure(s)\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
