// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file communicator.hpp
/// Rank-local handle onto a Transport providing the collectives the
/// model-parallel FNO needs: broadcast (B), its adjoint sum-reduction,
/// re-partition (R) and a few helpers (all-reduce, gather, scatter, barrier).
///
/// Collectives are blocking and must be called by every rank in the same
/// order. Every collective call draws a fresh tag from
/// (primitive, layer, per-primitive call index), so back-to-back collectives
/// cannot consume each other's messages.
///
/// Accounting covers off-rank traffic only: `elements` counts tensor elements
/// sent to another rank, `bytes` is elements times the element size (frame and
/// tensor headers are not counted). Local copies count nothing.

#include <array>
#include <chrono>
#include <ostream>
#include <string_view>

#include "tpfno/comm/transport.hpp"
#include "tpfno/partition.hpp"
#include "tpfno/tensor_io.hpp"

namespace tpfno {

enum class Primitive : std::uint8_t { broadcast = 0, reduce_sum, repartition, allreduce, gather, scatter, barrier, check };
inline constexpr std::size_t kNumPrimitives = 8;

constexpr std::string_view primitive_name(Primitive p) {
  constexpr std::array<std::string_view, kNumPrimitives> names{"broadcast", "reduce_sum", "repartition", "allreduce",
                                                               "gather",    "scatter",    "barrier",     "check"};
  return names[static_cast<std::size_t>(p)];
}

struct CommCounters {
  std::uint64_t calls = 0;
  std::uint64_t elements = 0;
  std::uint64_t bytes = 0;
  friend bool operator==(const CommCounters&, const CommCounters&) = default;
};

struct CommStats {
  std::array<CommCounters, kNumPrimitives> counters{};

  const CommCounters& operator[](Primitive p) const { return counters[static_cast<std::size_t>(p)]; }
  CommCounters& operator[](Primitive p) { return counters[static_cast<std::size_t>(p)]; }

  CommStats& operator+=(const CommStats& o) {
    for (std::size_t i = 0; i < kNumPrimitives; ++i) {
      counters[i].calls += o.counters[i].calls;
      counters[i].elements += o.counters[i].elements;
      counters[i].bytes += o.counters[i].bytes;
    }
    return *this;
  }

  std::uint64_t total_bytes() const {
    std::uint64_t b = 0;
    for (const auto& c : counters) b += c.bytes;
    return b;
  }

  /// Component-wise difference, for measuring a window of activity.
  friend CommStats operator-(CommStats a, const CommStats& b) {
    for (std::size_t i = 0; i < kNumPrimitives; ++i) {
      a.counters[i].calls -= b.counters[i].calls;
      a.counters[i].elements -= b.counters[i].elements;
      a.counters[i].bytes -= b.counters[i].bytes;
    }
    return a;
  }

  friend bool operator==(const CommStats&, const CommStats&) = default;
};

/// CSV: primitive,calls,elements,bytes
inline void write_stats_csv(std::ostream& os, const CommStats& s) {
  os << "primitive,calls,elements,bytes\n";
  for (std::size_t i = 0; i < kNumPrimitives; ++i) {
    const auto& c = s.counters[i];
    os << primitive_name(static_cast<Primitive>(i)) << ',' << c.calls << ',' << c.elements << ',' << c.bytes << '\n';
  }
}

inline constexpr Tag make_tag(Primitive p, std::uint16_t layer, std::uint64_t call_index) {
  return (static_cast<Tag>(p) << 56) | (static_cast<Tag>(layer) << 40) | (call_index & ((Tag{1} << 40) - 1));
}

class Communicator {
 public:
  Communicator(Transport& transport, std::size_t rank,
               std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : transport_(&transport), rank_(rank), timeout_(timeout) {
    if (rank >= transport.world_size()) throw ConfigError("rank out of range");
  }

  std::size_t rank() const noexcept { return rank_; }
  std::size_t size() const noexcept { return transport_->world_size(); }
  bool is_root(std::size_t root = 0) const noexcept { return rank_ == root; }

  /// Consistent snapshot of this rank's counters.
  CommStats comm_report() const { return stats_; }
  std::chrono::milliseconds timeout() const noexcept { return timeout_; }
  void set_timeout(std::chrono::milliseconds t) { timeout_ = t; }

  /// Copies `value` from `root` to every rank. Non-root ranks pass a tensor
  /// of the expected shape; its values are ignored.
  template <Scalar T>
  Tensor<T> broadcast(const Tensor<T>& value, std::size_t root = 0, std::uint16_t layer = 0) {
    return broadcast_impl(value, root, Primitive::broadcast, next_tag(Primitive::broadcast, layer));
  }

  /// Element-wise sum over ranks, delivered to `root`; other ranks receive an
  /// empty tensor. Summation order is rank order.
  template <Scalar T>
  Tensor<T> reduce_sum(const Tensor<T>& value, std::size_t root = 0, std::uint16_t layer = 0) {
    return reduce_impl(value, root, Primitive::reduce_sum, next_tag(Primitive::reduce_sum, layer));
  }

  /// Sum over ranks delivered to every rank (reduce to rank 0, then broadcast).
  template <Scalar T>
  Tensor<T> allreduce_sum(const Tensor<T>& value, std::uint16_t layer = 0) {
    const Tag t = next_tag(Primitive::allreduce, layer);
    ++stats_[Primitive::allreduce].calls;
    auto summed = reduce_impl(value, 0, Primitive::allreduce, t, /*count_call=*/false);
    return broadcast_impl(rank_ == 0 ? summed : value, 0, Primitive::allreduce, t + 1, /*count_call=*/false);
  }

  double allreduce_sum(double v, std::uint16_t layer = 0) {
    Tensor<double> t({{DimLabel::b, 1}}, {v});
    return allreduce_sum(t, layer)[0];
  }

  /// Moves a tensor distributed along `src.dim()` to distribution along
  /// `dst.dim()`. `local` is this rank's src slab.
  template <Scalar T>
  Tensor<T> repartition(const Tensor<T>& local, const Partition& src, const Partition& dst, std::uint16_t layer = 0) {
    check_world(src);
    check_world(dst);
    std::vector<Dim> global = local.dims();
    bool found = false;
    for (auto& d : global) {
      if (d.label == src.dim()) {
        if (d.extent != src.range(rank_).size()) {
          throw ShapeMismatch("local block " + dims_to_string(local.dims()) + " inconsistent with source partition");
        }
        d.extent = src.global_extent();
        found = true;
      }
    }
    if (!found) throw ShapeMismatch("source partition dim not present in local block");
    const auto plan = repartition_plan(src, dst, global, rank_);
    const Box src_frame = slab_box(src, global, rank_);
    const Box dst_frame = slab_box(dst, global, rank_);
    const Tag tag = next_tag(Primitive::repartition, layer);
    auto& c = stats_[Primitive::repartition];
    ++c.calls;

    Tensor<T> out(dst.local_dims(global, rank_));
    for (const auto& e : plan) {
      auto block = extract_block(local, src_frame, e.send);
      if (e.peer == rank_) {
        insert_block(out, dst_frame, e.recv, block);
      } else {
        c.elements += block.size();
        c.bytes += block.size() * sizeof(T);
        transport_->send(rank_, e.peer, tag, encode_tensor(block));
      }
    }
    for (const auto& e : plan) {
      if (e.peer == rank_) continue;
      auto block = receive<T>(e.peer, tag, "repartition");
      std::vector<Dim> expect = local.dims();
      for (std::size_t d = 0; d < expect.size(); ++d) expect[d].extent = e.recv.ranges[d].size();
      if (block.dims() != expect) {
        throw CollectiveMismatch("repartition: rank " + std::to_string(e.peer) + " sent " +
                                 dims_to_string(block.dims()) + ", expected " + dims_to_string(expect));
      }
      insert_block(out, dst_frame, e.recv, block);
    }
    return out;
  }

  /// Assembles the global tensor on `root` from slabs under `part`; other
  /// ranks receive an empty tensor.
  template <Scalar T>
  Tensor<T> gather(const Tensor<T>& local, const Partition& part, std::size_t root = 0) {
    check_world(part);
    const Tag tag = next_tag(Primitive::gather, 0);
    auto& c = stats_[Primitive::gather];
    ++c.calls;
    std::vector<Dim> global = local.dims();
    for (auto& d : global)
      if (d.label == part.dim()) d.extent = part.global_extent();
    if (rank_ != root) {
      c.elements += local.size();
      c.bytes += local.size() * sizeof(T);
      transport_->send(rank_, root, tag, encode_tensor(local));
      return {};
    }
    Tensor<T> out(global);
    for (std::size_t r = 0; r < size(); ++r) {
      Tensor<T> block = r == rank_ ? local : receive<T>(r, tag, "gather");
      if (block.dims() != part.local_dims(global, r)) throw CollectiveMismatch("gather: unexpected slab shape from rank " + std::to_string(r));
      const Box slab = slab_box(part, global, r);
      Box frame;
      for (const auto& d : global) frame.ranges.push_back({0, d.extent});
      insert_block(out, frame, slab, block);
    }
    return out;
  }

  /// Splits a `root`-held global tensor into slabs under `part`. Non-root
  /// ranks pass a tensor of the global shape (values ignored).
  template <Scalar T>
  Tensor<T> scatter(const Tensor<T>& global, const Partition& part, std::size_t root = 0) {
    check_world(part);
    const Tag tag = next_tag(Primitive::scatter, 0);
    auto& c = stats_[Primitive::scatter];
    ++c.calls;
    if (rank_ == root) {
      Box frame;
      for (const auto& d : global.dims()) frame.ranges.push_back({0, d.extent});
      Tensor<T> mine;
      for (std::size_t r = 0; r < size(); ++r) {
        auto block = extract_block(global, frame, slab_box(part, global.dims(), r));
        if (r == rank_) {
          mine = std::move(block);
        } else {
          c.elements += block.size();
          c.bytes += block.size() * sizeof(T);
          transport_->send(rank_, r, tag, encode_tensor(block));
        }
      }
      return mine;
    }
    auto block = receive<T>(root, tag, "scatter");
    if (block.dims() != part.local_dims(global.dims(), rank_)) throw CollectiveMismatch("scatter: unexpected slab shape");
    return block;
  }

  void barrier() {
    const Tag tag = next_tag(Primitive::barrier, 0);
    ++stats_[Primitive::barrier].calls;
    if (rank_ == 0) {
      for (std::size_t r = 1; r < size(); ++r) transport_->recv(rank_, r, tag, timeout_);
      for (std::size_t r = 1; r < size(); ++r) transport_->send(rank_, r, tag + 1, {});
    } else {
      transport_->send(rank_, 0, tag, {});
      transport_->recv(rank_, 0, tag + 1, timeout_);
    }
  }

  /// Throws ReplicationError unless every rank passes the same value.
  void check_identical(std::uint64_t digest, std::string_view what) {
    Tensor<double> mine({{DimLabel::b, 1}}, {std::bit_cast<double>(digest)});
    const Tag tag = next_tag(Primitive::check, 0);
    ++stats_[Primitive::check].calls;
    auto root_value = broadcast_impl(mine, 0, Primitive::check, tag, false);
    const bool same = std::bit_cast<std::uint64_t>(root_value[0]) == digest;
    const double bad = allreduce_sum(same ? 0.0 : 1.0);
    if (bad != 0.0) throw ReplicationError(std::string(what) + " differs across ranks");
  }

 private:
  Tag next_tag(Primitive p, std::uint16_t layer) {
    // Two tags per call: some collectives use a second phase at tag + 1.
    auto& n = call_index_[static_cast<std::size_t>(p)];
    const Tag t = make_tag(p, layer, 2 * n);
    ++n;
    return t;
  }

  void check_world(const Partition& p) const {
    if (p.num_ranks() != size()) throw ShapeMismatch("partition rank count differs from communicator size");
  }

  template <Scalar T>
  Tensor<T> receive(std::size_t src, Tag tag, std::string_view what) {
    Bytes msg = transport_->recv(rank_, src, tag, timeout_);
    try {
      return decode_tensor_as<T>(msg);
    } catch (const Error& e) {
      throw CollectiveMismatch(std::string(what) + ": bad message from rank " + std::to_string(src) + ": " + e.what());
    }
  }

  template <Scalar T>
  Tensor<T> broadcast_impl(const Tensor<T>& value, std::size_t root, Primitive p, Tag tag, bool count_call = true) {
    if (root >= size()) throw ConfigError("root out of range");
    auto& c = stats_[p];
    if (count_call) ++c.calls;
    if (rank_ == root) {
      const Bytes msg = encode_tensor(value);
      for (std::size_t r = 0; r < size(); ++r) {
        if (r == root) continue;
        c.elements += value.size();
        c.bytes += value.size() * sizeof(T);
        transport_->send(rank_, r, tag, msg);
      }
      return value;
    }
    auto got = receive<T>(root, tag, primitive_name(p));
    if (got.dims() != value.dims()) {
      throw CollectiveMismatch(std::string(primitive_name(p)) + ": root sent " + dims_to_string(got.dims()) +
                               ", rank " + std::to_string(rank_) + " expected " + dims_to_string(value.dims()));
    }
    return got;
  }

  template <Scalar T>
  Tensor<T> reduce_impl(const Tensor<T>& value, std::size_t root, Primitive p, Tag tag, bool count_call = true) {
    if (root >= size()) throw ConfigError("root out of range");
    auto& c = stats_[p];
    if (count_call) ++c.calls;
    if (rank_ != root) {
      c.elements += value.size();
      c.bytes += value.size() * sizeof(T);
      transport_->send(rank_, root, tag, encode_tensor(value));
      return {};
    }
    Tensor<T> acc;
    for (std::size_t r = 0; r < size(); ++r) {
      Tensor<T> part = r == rank_ ? value : receive<T>(r, tag, primitive_name(p));
      if (part.dims() != value.dims()) {
        throw CollectiveMismatch(std::string(primitive_name(p)) + ": rank " + std::to_string(r) + " contributed " +
                                 dims_to_string(part.dims()) + ", expected " + dims_to_string(value.dims()));
      }
      if (r == 0) {
        acc = std::move(part);
      } else {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += part[i];
      }
    }
    return acc;
  }

  Transport* transport_;
  std::size_t rank_;
  std::chrono::milliseconds timeout_;
  CommStats stats_;
  std::array<std::uint64_t, kNumPrimitives> call_index_{};
};

}  // namespace tpfno
