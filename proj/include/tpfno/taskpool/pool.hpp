// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file pool.hpp
/// Task execution over a pre-started pool of worker processes.
///
/// Store layout:
///   jobs/<job>/tasks/<task>/spec   text: callable, output keys, argument list
///   jobs/<job>/tasks/<task>/args   inline argument payloads (u64 LE length + bytes each)
///   jobs/<job>/tasks/<task>/out    result bytes, or
///   jobs/<job>/tasks/<task>/err    the worker's error message
///   jobs/<job>/shared/<i>          payloads uploaded once per job
///   broadcast/<i>                  broadcast_value payloads
///
/// A dispatcher thread feeds fixed-size task records into one pipe shared by
/// all workers; an idle worker takes the next record. Results travel only
/// through the store, where fetch polls for them.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "tpfno/taskpool/store.hpp"

namespace tpfno {

using TaskFn = std::function<Bytes(std::span<const Bytes> args)>;

/// Callables by key. Registration must happen before a pool starts, since
/// workers are forked with a copy of the registry.
class TaskRegistry {
 public:
  void add(const std::string& key, TaskFn fn) { fns_[key] = std::move(fn); }
  const TaskFn* find(const std::string& key) const {
    auto it = fns_.find(key);
    return it == fns_.end() ? nullptr : &it->second;
  }

  /// noop, hello, sleep, fail and checksum.
  static TaskRegistry& builtin() {
    static TaskRegistry r = [] {
      TaskRegistry t;
      t.add("noop", [](std::span<const Bytes>) { return Bytes{}; });
      t.add("hello", [](std::span<const Bytes> a) {
        return to_bytes("hello from " + (a.empty() ? std::string("anonymous") : to_string(a[0])));
      });
      // arg0: seconds as text. Returns the measured duration in seconds as text.
      t.add("sleep", [](std::span<const Bytes> a) {
        const double s = a.empty() ? 0.0 : std::stod(to_string(a[0]));
        const auto t0 = std::chrono::steady_clock::now();
        std::this_thread::sleep_for(std::chrono::duration<double>(s));
        const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9f", took);
        return to_bytes(buf);
      });
      t.add("fail", [](std::span<const Bytes> a) -> Bytes {
        throw std::runtime_error(a.empty() ? "task failed" : to_string(a[0]));
      });
      // FNV-1a over every argument, as 16 hex digits.
      t.add("checksum", [](std::span<const Bytes> a) {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& b : a)
          for (std::byte v : b) {
            h ^= std::to_integer<std::uint8_t>(v);
            h *= 1099511628211ull;
          }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return to_bytes(buf);
      });
      return t;
    }();
    return r;
  }

 private:
  std::map<std::string, TaskFn> fns_;
};

/// Handle to a stored value: a task output (with its error key) or a
/// broadcast payload. Copies share one cache.
class RemoteRef {
 public:
  RemoteRef() = default;
  RemoteRef(std::string key, std::string error_key = {})
      : key_(std::move(key)), error_key_(std::move(error_key)), cache_(std::make_shared<std::optional<Bytes>>()) {}

  const std::string& key() const noexcept { return key_; }
  const std::string& error_key() const noexcept { return error_key_; }
  bool cached() const { return cache_ && cache_->has_value(); }

 private:
  friend class TaskPool;
  std::string key_, error_key_;
  std::shared_ptr<std::optional<Bytes>> cache_;
};

/// One task argument: inline bytes (uploaded per task) or a stored ref.
struct TaskArg {
  std::optional<Bytes> value;
  std::string ref_key;

  static TaskArg bytes(Bytes b) { return {std::move(b), {}}; }
  static TaskArg text(std::string_view s) { return {to_bytes(s), {}}; }
  static TaskArg ref(const RemoteRef& r) { return {std::nullopt, r.key()}; }
};

struct JobHandle {
  std::string job_id;
  std::vector<RemoteRef> refs;  ///< one per task, in submission order
  double submit_seconds = 0.0;  ///< wall time of submit_job
  std::uint64_t uploads = 0;    ///< store writes made by the submission
};

/// (sum of task durations / workers) / makespan.
inline double weak_scaling_efficiency(std::span<const double> durations, std::size_t workers, double makespan) {
  if (workers == 0 || makespan <= 0.0) throw ConfigError("efficiency needs workers > 0 and a positive makespan");
  double total = 0.0;
  for (double d : durations) total += d;
  return total / static_cast<double>(workers) / makespan;
}

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
};

/// Least squares y = intercept + slope x.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("linear fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sx += x[i], sy += y[i], sxx += x[i] * x[i], sxy += x[i] * y[i];
  LinearFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
    ss_tot += (y[i] - sy / n) * (y[i] - sy / n);
  }
  f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

class TaskPool {
 public:
  static constexpr std::size_t kRecordBytes = 256;

  TaskPool(std::filesystem::path store_root, std::size_t workers,
           const TaskRegistry& registry = TaskRegistry::builtin())
      : store_(std::move(store_root)), registry_(&registry) {
    if (workers == 0) throw ConfigError("pool size must be at least 1");
    int fds[2];
    if (::pipe(fds) != 0) throw TransportError("pipe failed");
    for (std::size_t w = 0; w < workers; ++w) {
      const pid_t pid = ::fork();
      if (pid < 0) {
        ::close(fds[1]);
        ::close(fds[0]);
        stop_workers();
        throw TransportError("fork failed");
      }
      if (pid == 0) {
        ::close(fds[1]);
        worker_loop(fds[0]);
        std::_Exit(0);
      }
      pids_.push_back(pid);
    }
    ::close(fds[0]);
    queue_fd_ = fds[1];
    dispatcher_ = std::thread([this] { dispatch_loop(); });
  }

  TaskPool(const TaskPool&) = delete;
  TaskPool& operator=(const TaskPool&) = delete;

  ~TaskPool() {
    {
      std::lock_guard lock(mu_);
      closing_ = true;
    }
    cv_.notify_all();
    if (dispatcher_.joinable()) dispatcher_.join();
    stop_workers();
  }

  ObjectStore& store() noexcept { return store_; }
  std::size_t workers() const noexcept { return pids_.size(); }

  /// Uploads `payload` once; the ref can be passed to any number of tasks.
  RemoteRef broadcast_value(std::span<const std::byte> payload) {
    const std::string key = "broadcast/" + std::to_string(::getpid()) + "-" + std::to_string(broadcasts_++);
    if (!store_.put(key, payload)) throw StoreWriteError("broadcast key collision: " + key);
    return RemoteRef(key);
  }

  /// One task per entry of `per_task`. `shared` payloads are uploaded once
  /// for the job and passed ahead of each task's own arguments. Tasks whose
  /// output already exists are not rerun.
  JobHandle submit_job(const std::string& callable, const std::vector<std::vector<TaskArg>>& per_task,
                       const std::vector<Bytes>& shared = {}, std::string job_id = {}) {
    if (!registry_->find(callable)) throw UnknownCallable("no task registered as '" + callable + "'");
    const auto t0 = std::chrono::steady_clock::now();
    const auto writes0 = store_.counters().writes;
    JobHandle h;
    h.job_id = job_id.empty() ? "job" + std::to_string(::getpid()) + "-" + std::to_string(jobs_++) : std::move(job_id);
    const std::string base = "jobs/" + h.job_id;
    std::vector<std::string> shared_keys;
    for (std::size_t i = 0; i < shared.size(); ++i) {
      shared_keys.push_back(base + "/shared/" + std::to_string(i));
      store_.put(shared_keys.back(), shared[i]);
    }
    std::vector<std::string> records;
    for (std::size_t t = 0; t < per_task.size(); ++t) {
      char id[16];
      std::snprintf(id, sizeof id, "t%06zu", t);
      const std::string dir = base + "/tasks/" + id;
      std::ostringstream spec;
      Bytes args;
      spec << "task=" << id << "\ncallable=" << callable << "\nout=" << dir << "/out\nerr=" << dir << "/err\n";
      for (const auto& k : shared_keys) spec << "arg=ref " << k << '\n';
      std::size_t inline_index = 0;
      for (const auto& a : per_task[t]) {
        if (a.value) {
          spec << "arg=inline " << inline_index++ << '\n';
          detail::put_le<std::uint64_t>(args, a.value->size());
          args.insert(args.end(), a.value->begin(), a.value->end());
        } else {
          spec << "arg=ref " << a.ref_key << '\n';
        }
      }
      store_.put(dir + "/spec", spec.str());
      store_.put(dir + "/args", args);
      h.refs.emplace_back(dir + "/out", dir + "/err");
      records.push_back(dir);
    }
    {
      std::lock_guard lock(mu_);
      for (auto& r : records) queue_.push_back(std::move(r));
    }
    cv_.notify_all();
    h.submit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    h.uploads = store_.counters().writes - writes0;
    return h;
  }

  /// Blocks until the referenced value exists. Served from the ref's cache
  /// after the first success. Throws TaskFailed with the worker's message or
  /// FetchTimeout.
  const Bytes& fetch(const RemoteRef& ref, std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    if (!ref.cache_) throw ConfigError("fetch of an empty ref");
    if (ref.cache_->has_value()) return **ref.cache_;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    auto pause = std::chrono::microseconds(50);
    while (true) {
      if (store_.contains(ref.key())) {
        if (auto v = store_.get(ref.key())) {
          *ref.cache_ = std::move(*v);
          return **ref.cache_;
        }
      }
      if (!ref.error_key().empty() && store_.contains(ref.error_key())) {
        const auto msg = store_.get(ref.error_key());
        throw TaskFailed(ref.key() + ": " + (msg ? to_string(*msg) : std::string("unknown error")));
      }
      if (std::chrono::steady_clock::now() > deadline) throw FetchTimeout("timed out waiting for " + ref.key());
      std::this_thread::sleep_for(pause);
      pause = std::min(pause * 2, std::chrono::microseconds(5000));
    }
  }

  std::vector<Bytes> fetch_all(const JobHandle& h, std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    std::vector<Bytes> out;
    for (const auto& r : h.refs) out.push_back(fetch(r, timeout));
    return out;
  }

 private:
  void dispatch_loop() {
    while (true) {
      std::string dir;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return closing_ || !queue_.empty(); });
        if (queue_.empty()) return;
        dir = std::move(queue_.front());
        queue_.pop_front();
      }
      std::array<char, kRecordBytes> rec{};
      if (dir.size() >= kRecordBytes) continue;  // unreachable for generated ids
      std::memcpy(rec.data(), dir.data(), dir.size());
      std::size_t done = 0;
      while (done < rec.size()) {
        const auto n = ::write(queue_fd_, rec.data() + done, rec.size() - done);
        if (n < 0 && errno == EINTR) continue;
        if (n < 0) return;
        done += static_cast<std::size_t>(n);
      }
    }
  }

  // Runs in the forked child.
  void worker_loop(int fd) {
    std::array<char, kRecordBytes> rec{};
    while (true) {
      std::size_t got = 0;
      while (got < rec.size()) {
        const auto n = ::read(fd, rec.data() + got, rec.size() - got);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return;
        got += static_cast<std::size_t>(n);
      }
      run_task(std::string(rec.data(), ::strnlen(rec.data(), rec.size())));
    }
  }

  void run_task(const std::string& dir) {
    ObjectStore& s = store_;
    const std::string out_key = dir + "/out", err_key = dir + "/err";
    if (s.contains(out_key)) return;
    try {
      const auto spec = s.get(dir + "/spec");
      const auto blob = s.get(dir + "/args");
      if (!spec || !blob) throw std::runtime_error("task files missing under " + dir);
      std::istringstream in(to_string(*spec));
      std::string callable;
      std::vector<Bytes> args;
      std::vector<Bytes> inline_args;
      for (std::size_t pos = 0; pos + 8 <= blob->size();) {
        const auto len = detail::get_le<std::uint64_t>(blob->data() + pos);
        pos += 8;
        if (pos + len > blob->size()) throw std::runtime_error("truncated argument blob");
        inline_args.emplace_back(blob->begin() + static_cast<std::ptrdiff_t>(pos),
                                 blob->begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
      }
      for (std::string line; std::getline(in, line);) {
        if (line.rfind("callable=", 0) == 0) callable = line.substr(9);
        if (line.rfind("arg=inline ", 0) == 0) args.push_back(inline_args.at(std::stoull(line.substr(11))));
        if (line.rfind("arg=ref ", 0) == 0) {
          auto v = s.get(line.substr(8));
          if (!v) throw std::runtime_error("missing referenced value " + line.substr(8));
          args.push_back(std::move(*v));
        }
      }
      const TaskFn* fn = registry_->find(callable);
      if (!fn) throw std::runtime_error("no task registered as '" + callable + "'");
      const Bytes result = (*fn)(args);
      s.put(out_key, result);
    } catch (const std::exception& e) {
      s.put(err_key, std::string_view(e.what()));
    }
  }

  void stop_workers() {
    if (queue_fd_ >= 0) ::close(queue_fd_);
    queue_fd_ = -1;
    for (pid_t p : pids_) {
      int status = 0;
      while (::waitpid(p, &status, 0) < 0 && errno == EINTR) {
      }
    }
    pids_.clear();
  }

  ObjectStore store_;
  const TaskRegistry* registry_;
  std::vector<pid_t> pids_;
  int queue_fd_ = -1;
  std::thread dispatcher_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool closing_ = false;
  std::uint64_t jobs_ = 0;
  std::uint64_t broadcasts_ = 0;
};

struct SweepPoint {
  std::size_t tasks = 0;
  double submit_seconds = 0.0;  ///< median over repeats
};

/// Submits no-op jobs of each size in `sizes` and records the submission
/// wall time. Sizes are visited round-robin `repeats` times and the median is
/// kept; every job is drained before the next one starts.
inline std::vector<SweepPoint> submission_sweep(TaskPool& pool, std::span<const std::size_t> sizes,
                                                std::size_t repeats = 5) {
  std::vector<std::vector<double>> t(sizes.size());
  for (std::size_t k = 0; k < std::max<std::size_t>(repeats, 1); ++k) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const auto h = pool.submit_job("noop", std::vector<std::vector<TaskArg>>(sizes[i]));
      t[i].push_back(h.submit_seconds);
      pool.fetch_all(h);
    }
  }
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    std::sort(t[i].begin(), t[i].end());
    out.push_back({sizes[i], t[i][t[i].size() / 2]});
  }
  return out;
}

struct SleepDemo {
  std::vector<double> durations;  ///< as measured inside each task
  double makespan = 0.0;          ///< submission start to last fetch
  double efficiency = 0.0;
};

inline SleepDemo sleep_demo(TaskPool& pool, std::size_t tasks, double seconds) {
  std::vector<std::vector<TaskArg>> args(tasks, {TaskArg::text(std::to_string(seconds))});
  const auto t0 = std::chrono::steady_clock::now();
  const auto h = pool.submit_job("sleep", args);
  const auto outs = pool.fetch_all(h, std::chrono::milliseconds(static_cast<long>(seconds * 1000) + 60000));
  SleepDemo d;
  d.makespan = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& o : outs) d.durations.push_back(std::stod(to_string(o)));
  d.efficiency = weak_scaling_efficiency(d.durations, pool.workers(), d.makespan);
  return d;
}

}  // namespace tpfno
