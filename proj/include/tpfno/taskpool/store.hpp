// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file store.hpp
/// Directory-backed, write-once key -> bytes store. A write goes to a
/// private temp file which is then hard-linked to its final name; link(2)
/// fails if the key exists, so concurrent writers never clobber each other
/// and readers never see partial blobs.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "tpfno/tensor_io.hpp"
#include "tpfno/errors.hpp"

namespace tpfno {

inline std::string to_string(std::span<const std::byte> b) {
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

inline Bytes to_bytes(std::string_view s) {
  const auto* p = reinterpret_cast<const std::byte*>(s.data());
  return Bytes(p, p + s.size());
}

struct StoreCounters {
  std::uint64_t writes = 0;  ///< blobs created by this process
  std::uint64_t reads = 0;   ///< blobs read by this process
  std::uint64_t bytes_written = 0;
};

class ObjectStore {
 public:
  explicit ObjectStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "tmp");
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path path_of(const std::string& key) const { return root_ / key; }

  /// Creates `key`. Returns false (and writes nothing) if it already exists.
  bool put(const std::string& key, std::span<const std::byte> value) {
    check_key(key);
    const auto final_path = path_of(key);
    std::error_code ec;
    std::filesystem::create_directories(final_path.parent_path(), ec);
    if (ec) throw StoreWriteError("cannot create " + final_path.parent_path().string() + ": " + ec.message());
    const auto tmp = root_ / "tmp" / (std::to_string(::getpid()) + "-" + std::to_string(seq_++));
    {
      const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
      if (fd < 0) throw StoreWriteError("cannot create " + tmp.string() + ": " + std::strerror(errno));
      std::size_t done = 0;
      while (done < value.size()) {
        const auto n = ::write(fd, value.data() + done, value.size() - done);
        if (n < 0 && errno == EINTR) continue;
        if (n < 0) {
          ::close(fd);
          ::unlink(tmp.c_str());
          throw StoreWriteError("write " + tmp.string() + ": " + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
      }
      ::close(fd);
    }
    const int rc = ::link(tmp.c_str(), final_path.c_str());
    const int err = errno;
    ::unlink(tmp.c_str());
    if (rc != 0) {
      if (err == EEXIST) return false;
      throw StoreWriteError("link " + final_path.string() + ": " + std::strerror(err));
    }
    ++counters_.writes;
    counters_.bytes_written += value.size();
    return true;
  }

  bool put(const std::string& key, std::string_view text) {
    return put(key, std::span<const std::byte>(reinterpret_cast<const std::byte*>(text.data()), text.size()));
  }

  bool contains(const std::string& key) const { return std::filesystem::exists(path_of(key)); }

  std::optional<Bytes> get(const std::string& key) {
    check_key(key);
    std::ifstream in(path_of(key), std::ios::binary);
    if (!in) return std::nullopt;
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ++counters_.reads;
    return to_bytes(text);
  }

  const StoreCounters& counters() const noexcept { return counters_; }

 private:
  static void check_key(const std::string& key) {
    if (key.empty() || key.front() == '/' || key.find("..") != std::string::npos || key.rfind("tmp/", 0) == 0) {
      throw StoreWriteError("invalid store key '" + key + "'");
    }
  }

  std::filesystem::path root_;
  StoreCounters counters_;
  std::uint64_t seq_ = 0;
};

}  // namespace tpfno
