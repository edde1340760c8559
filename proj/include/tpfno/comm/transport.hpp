// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file transport.hpp
/// Point-to-point byte transport keyed by (src, dst, tag), and the in-process
/// realization used by tests.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "tpfno/errors.hpp"
#include "tpfno/tensor_io.hpp"

namespace tpfno {

using Tag = std::uint64_t;

/// Messages between a fixed (src, dst) pair with equal tag are delivered in
/// send order. Sends never block on the receiver.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::size_t world_size() const = 0;
  virtual void send(std::size_t src, std::size_t dst, Tag tag, Bytes payload) = 0;
  /// Blocks until a message from `src` with `tag` arrives for `dst`.
  /// Throws CommTimeout after `timeout`, CommAborted if the transport was aborted.
  virtual Bytes recv(std::size_t dst, std::size_t src, Tag tag, std::chrono::milliseconds timeout) = 0;
  /// Wakes every blocked receiver with CommAborted.
  virtual void abort(const std::string& reason) = 0;
};

/// Per-destination message queue.
class Mailbox {
 public:
  void push(std::size_t src, Tag tag, Bytes payload) {
    {
      std::lock_guard lock(mu_);
      queues_[{src, tag}].push_back(std::move(payload));
    }
    cv_.notify_all();
  }

  Bytes pop(std::size_t src, Tag tag, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    const auto key = std::make_pair(src, tag);
    const bool ok = cv_.wait_for(lock, timeout, [&] {
      if (!abort_reason_.empty()) return true;
      auto it = queues_.find(key);
      return it != queues_.end() && !it->second.empty();
    });
    if (!abort_reason_.empty()) throw CommAborted(abort_reason_);
    if (!ok) {
      throw CommTimeout("timed out after " + std::to_string(timeout.count()) + " ms waiting for message from rank " +
                        std::to_string(src) + " tag " + std::to_string(tag));
    }
    auto it = queues_.find(key);
    Bytes out = std::move(it->second.front());
    it->second.pop_front();
    if (it->second.empty()) queues_.erase(it);
    return out;
  }

  void abort(const std::string& reason) {
    {
      std::lock_guard lock(mu_);
      if (abort_reason_.empty()) abort_reason_ = reason.empty() ? "transport aborted" : reason;
    }
    cv_.notify_all();
  }

  std::size_t pending() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [k, q] : queues_) n += q.size();
    return n;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<std::size_t, Tag>, std::deque<Bytes>> queues_;
  std::string abort_reason_;
};

/// All ranks live in one process; each has a mailbox.
class InProcTransport final : public Transport {
 public:
  explicit InProcTransport(std::size_t world_size) : boxes_(world_size) {
    if (world_size == 0) throw ConfigError("world size must be positive");
  }

  std::size_t world_size() const override { return boxes_.size(); }

  void send(std::size_t src, std::size_t dst, Tag tag, Bytes payload) override {
    check(src);
    check(dst);
    boxes_[dst].push(src, tag, std::move(payload));
  }

  Bytes recv(std::size_t dst, std::size_t src, Tag tag, std::chrono::milliseconds timeout) override {
    check(src);
    check(dst);
    return boxes_[dst].pop(src, tag, timeout);
  }

  void abort(const std::string& reason) override {
    for (auto& b : boxes_) b.abort(reason);
  }

  std::size_t pending() const {
    std::size_t n = 0;
    for (const auto& b : boxes_) n += b.pending();
    return n;
  }

 private:
  void check(std::size_t r) const {
    if (r >= boxes_.size()) throw TransportError("rank " + std::to_string(r) + " out of range");
  }
  std::vector<Mailbox> boxes_;
};

}  // namespace tpfno
