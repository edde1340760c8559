// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file launch.hpp
/// Starting P ranks: as threads over an InProcTransport, or as child
/// processes that meet through a SocketTransport rendezvous directory.

#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <thread>
#include <type_traits>
#include <variant>

#include "tpfno/comm/communicator.hpp"
#include "tpfno/comm/socket_transport.hpp"

namespace tpfno {

template <class R>
struct RankResults {
  std::vector<R> values;       ///< one per rank
  std::vector<CommStats> stats;

  CommStats total_stats() const {
    CommStats s;
    for (const auto& r : stats) s += r;
    return s;
  }
};

/// Runs fn(Communicator&) on `num_ranks` threads sharing one in-process
/// transport. If any rank throws, the transport is aborted so the others
/// unblock, and the first non-abort error is rethrown. Messages left
/// undelivered at exit raise CollectiveMismatch.
template <class F>
auto run_inproc(std::size_t num_ranks, F&& fn, std::chrono::milliseconds timeout = std::chrono::seconds(120)) {
  using Raw = std::invoke_result_t<F&, Communicator&>;
  using R = std::conditional_t<std::is_void_v<Raw>, std::monostate, Raw>;

  InProcTransport transport(num_ranks);
  std::vector<std::optional<R>> values(num_ranks);
  std::vector<CommStats> stats(num_ranks);
  std::vector<std::exception_ptr> errors(num_ranks);

  auto body = [&](std::size_t rank) {
    Communicator comm(transport, rank, timeout);
    try {
      if constexpr (std::is_void_v<Raw>) {
        fn(comm);
        values[rank].emplace();
      } else {
        values[rank].emplace(fn(comm));
      }
    } catch (...) {
      errors[rank] = std::current_exception();
      transport.abort("rank " + std::to_string(rank) + " failed");
    }
    stats[rank] = comm.comm_report();
  };

  std::vector<std::thread> threads;
  threads.reserve(num_ranks);
  for (std::size_t r = 1; r < num_ranks; ++r) threads.emplace_back(body, r);
  body(0);
  for (auto& t : threads) t.join();

  std::exception_ptr first;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const CommAborted&) {
      if (!first) first = e;
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  if (first) std::rethrow_exception(first);
  if (const auto left = transport.pending(); left > 0) {
    throw CollectiveMismatch(std::to_string(left) + " message(s) never received; ranks called collectives in different orders");
  }

  RankResults<R> out;
  out.stats = std::move(stats);
  for (auto& v : values) out.values.push_back(std::move(*v));
  return out;
}

/// Creates a fresh rendezvous directory under the system temp dir.
inline std::filesystem::path make_rendezvous_dir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "tpfno-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw TransportError("mkdtemp failed");
  return tmpl;
}

/// Forks `num_ranks` copies of `exe args... --rank r --world-size P
/// --rendezvous DIR` and waits for all of them. Returns 0 if every rank exits
/// 0, otherwise the first nonzero exit status (remaining ranks are
/// terminated).
inline int launch_processes(const std::filesystem::path& exe, const std::vector<std::string>& args,
                            std::size_t num_ranks, const std::filesystem::path& rendezvous) {
  std::vector<pid_t> pids;
  for (std::size_t r = 0; r < num_ranks; ++r) {
    std::vector<std::string> argv_s{exe.string()};
    argv_s.insert(argv_s.end(), args.begin(), args.end());
    argv_s.insert(argv_s.end(), {"--rank", std::to_string(r), "--world-size", std::to_string(num_ranks),
                                 "--rendezvous", rendezvous.string()});
    std::vector<char*> argv;
    for (auto& s : argv_s) argv.push_back(s.data());
    argv.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork failed");
    if (pid == 0) {
      ::execv(argv[0], argv.data());
      std::_Exit(127);
    }
    pids.push_back(pid);
  }
  int result = 0;
  std::size_t remaining = pids.size();
  while (remaining > 0) {
    int status = 0;
    const pid_t done = ::waitpid(-1, &status, 0);
    if (done < 0) {
      if (errno == EINTR) continue;
      break;
    }
    bool ours = false;
    for (auto& p : pids)
      if (p == done) {
        p = -1;
        ours = true;
      }
    if (!ours) continue;
    --remaining;
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    if (code != 0 && result == 0) {
      result = code;
      for (pid_t p : pids)
        if (p > 0) ::kill(p, SIGTERM);
    }
  }
  return result;
}

}  // namespace tpfno
