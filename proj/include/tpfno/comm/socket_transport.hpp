// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file socket_transport.hpp
/// Multi-process transport over Unix domain sockets. Every rank is its own
/// process; ranks rendezvous through socket files in a shared directory and
/// form a full mesh (rank r connects to every lower rank and accepts every
/// higher one).
///
/// Wire frame: u32 payload length (LE) | u64 tag (LE) | payload bytes.

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <thread>

#include "tpfno/comm/transport.hpp"

namespace tpfno {

inline constexpr std::size_t kFrameHeaderBytes = 12;

/// Encodes one socket frame.
inline Bytes encode_frame(Tag tag, std::span<const std::byte> payload) {
  if (payload.size() > 0xFFFFFFFFu) throw TransportError("frame payload exceeds 4 GiB");
  Bytes out;
  out.reserve(kFrameHeaderBytes + payload.size());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(payload.size()));
  detail::put_le<std::uint64_t>(out, tag);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct FrameHeader {
  std::uint32_t length;
  Tag tag;
};

inline FrameHeader decode_frame_header(std::span<const std::byte, kFrameHeaderBytes> h) {
  return {detail::get_le<std::uint32_t>(h.data()), detail::get_le<std::uint64_t>(h.data() + 4)};
}

namespace detail {

inline void write_all(int fd, const std::byte* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket send failed: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

/// Returns false on orderly EOF before any byte was read.
inline bool read_all(int fd, std::byte* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("socket closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

inline sockaddr_un unix_address(const std::filesystem::path& p) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const std::string s = p.string();
  if (s.size() >= sizeof(addr.sun_path)) throw TransportError("socket path too long: " + s);
  std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
  return addr;
}

}  // namespace detail

class SocketTransport final : public Transport {
 public:
  SocketTransport(std::size_t rank, std::size_t world_size, std::filesystem::path rendezvous,
                  std::chrono::milliseconds connect_timeout = std::chrono::seconds(30))
      : rank_(rank), world_(world_size), dir_(std::move(rendezvous)), fds_(world_size, -1), send_mu_(world_size) {
    if (rank_ >= world_) throw ConfigError("rank out of range");
    try {
      listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
      if (listen_fd_ < 0) throw TransportError("socket() failed");
      const auto addr = detail::unix_address(socket_path(rank_));
      std::filesystem::remove(socket_path(rank_));
      if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw TransportError("bind " + socket_path(rank_).string() + ": " + std::strerror(errno));
      }
      if (::listen(listen_fd_, static_cast<int>(world_)) != 0) throw TransportError("listen failed");

      for (std::size_t peer = 0; peer < rank_; ++peer) connect_to(peer, connect_timeout);
      for (std::size_t n = rank_ + 1; n < world_; ++n) accept_one();
      for (std::size_t peer = 0; peer < world_; ++peer)
        if (peer != rank_) readers_.emplace_back([this, peer] { reader_loop(peer); });
    } catch (...) {
      shutdown();
      throw;
    }
  }

  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  ~SocketTransport() override { shutdown(); }

  std::size_t world_size() const override { return world_; }
  std::size_t rank() const { return rank_; }

  void send(std::size_t src, std::size_t dst, Tag tag, Bytes payload) override {
    if (src != rank_) throw TransportError("socket transport can only send from its own rank");
    if (dst >= world_) throw TransportError("destination rank out of range");
    if (dst == rank_) {
      inbox_.push(src, tag, std::move(payload));
      return;
    }
    const Bytes frame = encode_frame(tag, payload);
    std::lock_guard lock(send_mu_[dst]);
    detail::write_all(fds_[dst], frame.data(), frame.size());
  }

  Bytes recv(std::size_t dst, std::size_t src, Tag tag, std::chrono::milliseconds timeout) override {
    if (dst != rank_) throw TransportError("socket transport can only receive on its own rank");
    if (src >= world_) throw TransportError("source rank out of range");
    return inbox_.pop(src, tag, timeout);
  }

  void abort(const std::string& reason) override { inbox_.abort(reason); }

 private:
  std::filesystem::path socket_path(std::size_t r) const { return dir_ / ("rank" + std::to_string(r) + ".sock"); }

  void connect_to(std::size_t peer, std::chrono::milliseconds timeout) {
    const auto addr = detail::unix_address(socket_path(peer));
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
      if (fd < 0) throw TransportError("socket() failed");
      if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
        Bytes hello;
        detail::put_le<std::uint32_t>(hello, static_cast<std::uint32_t>(rank_));
        detail::write_all(fd, hello.data(), hello.size());
        fds_[peer] = fd;
        return;
      }
      ::close(fd);
      if (std::chrono::steady_clock::now() > deadline) {
        throw CommTimeout("could not connect to rank " + std::to_string(peer) + " at " + socket_path(peer).string());
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  void accept_one() {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) throw TransportError(std::string("accept failed: ") + std::strerror(errno));
    std::byte hello[4];
    if (!detail::read_all(fd, hello, 4)) {
      ::close(fd);
      throw TransportError("peer closed during handshake");
    }
    const auto peer = detail::get_le<std::uint32_t>(hello);
    if (peer <= rank_ || peer >= world_ || fds_[peer] != -1) {
      ::close(fd);
      throw TransportError("unexpected handshake from rank " + std::to_string(peer));
    }
    fds_[peer] = fd;
  }

  void reader_loop(std::size_t peer) {
    try {
      while (!stopping_) {
        std::array<std::byte, kFrameHeaderBytes> head{};
        if (!detail::read_all(fds_[peer], head.data(), head.size())) return;
        const auto h = decode_frame_header(head);
        Bytes payload(h.length);
        if (h.length > 0 && !detail::read_all(fds_[peer], payload.data(), payload.size())) return;
        inbox_.push(peer, h.tag, std::move(payload));
      }
    } catch (const std::exception& e) {
      if (!stopping_) inbox_.abort(std::string("link to rank ") + std::to_string(peer) + " failed: " + e.what());
    }
  }

  void shutdown() {
    stopping_ = true;
    for (int fd : fds_)
      if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    readers_.clear();
    for (int& fd : fds_) {
      if (fd >= 0) ::close(fd);
      fd = -1;
    }
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      std::error_code ec;
      std::filesystem::remove(socket_path(rank_), ec);
    }
  }

  std::size_t rank_;
  std::size_t world_;
  std::filesystem::path dir_;
  int listen_fd_ = -1;
  std::vector<int> fds_;
  std::vector<std::mutex> send_mu_;
  std::vector<std::thread> readers_;
  std::atomic<bool> stopping_{false};
  Mailbox inbox_;
};

}  // namespace tpfno
