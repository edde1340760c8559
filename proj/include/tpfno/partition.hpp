// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file partition.hpp
/// 1-D block decomposition of one tensor dimension over a linear rank set,
/// and the intersection routing used by re-partition.

#include <optional>
#include <string>
#include <vector>

#include "tpfno/tensor.hpp"

namespace tpfno {

/// Half-open index range [start, stop).
struct BlockRange {
  std::size_t start = 0;
  std::size_t stop = 0;

  std::size_t size() const noexcept { return stop - start; }
  bool empty() const noexcept { return stop <= start; }
  bool contains(std::size_t i) const noexcept { return i >= start && i < stop; }
  friend bool operator==(const BlockRange&, const BlockRange&) = default;
};

inline std::optional<BlockRange> range_intersection(const BlockRange& a, const BlockRange& b) {
  const BlockRange r{std::max(a.start, b.start), std::min(a.stop, b.stop)};
  if (r.empty()) return std::nullopt;
  return r;
}

/// Remainder-first block split: extents differ by at most one and the first
/// (extent mod num_ranks) ranks get the larger share.
inline std::vector<BlockRange> block_decompose(std::size_t global_extent, std::size_t num_ranks) {
  if (num_ranks == 0) throw InfeasiblePartition("cannot partition over zero ranks");
  if (num_ranks > global_extent) {
    throw InfeasiblePartition("cannot split extent " + std::to_string(global_extent) + " over " +
                              std::to_string(num_ranks) + " ranks without empty blocks");
  }
  const std::size_t base = global_extent / num_ranks;
  const std::size_t rem = global_extent % num_ranks;
  std::vector<BlockRange> out;
  out.reserve(num_ranks);
  std::size_t start = 0;
  for (std::size_t r = 0; r < num_ranks; ++r) {
    const std::size_t n = base + (r < rem ? 1 : 0);
    out.push_back({start, start + n});
    start += n;
  }
  return out;
}

class Partition {
 public:
  Partition(DimLabel dim, std::size_t global_extent, std::size_t num_ranks)
      : dim_(dim), global_extent_(global_extent), ranges_(block_decompose(global_extent, num_ranks)) {}

  DimLabel dim() const noexcept { return dim_; }
  std::size_t global_extent() const noexcept { return global_extent_; }
  std::size_t num_ranks() const noexcept { return ranges_.size(); }
  const BlockRange& range(std::size_t rank) const { return ranges_.at(rank); }
  const std::vector<BlockRange>& ranges() const noexcept { return ranges_; }

  /// Rank-local shape of a global tensor under this partition.
  std::vector<Dim> local_dims(std::vector<Dim> global, std::size_t rank) const {
    for (auto& d : global)
      if (d.label == dim_) d.extent = range(rank).size();
    return global;
  }

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  DimLabel dim_;
  std::size_t global_extent_;
  std::vector<BlockRange> ranges_;
};

/// Axis-aligned sub-block in global coordinates, one range per tensor dim.
struct Box {
  std::vector<BlockRange> ranges;

  std::size_t volume() const {
    std::size_t v = 1;
    for (const auto& r : ranges) v *= r.size();
    return v;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

inline std::optional<Box> box_intersection(const Box& a, const Box& b) {
  if (a.ranges.size() != b.ranges.size()) throw ShapeMismatch("box rank mismatch");
  Box out;
  for (std::size_t d = 0; d < a.ranges.size(); ++d) {
    auto r = range_intersection(a.ranges[d], b.ranges[d]);
    if (!r) return std::nullopt;
    out.ranges.push_back(*r);
  }
  return out;
}

struct PlanEntry {
  std::size_t peer;
  Box send;  ///< part of this rank's src slab destined for `peer`
  Box recv;  ///< part of this rank's dst slab arriving from `peer`
};

/// Routing table for moving a tensor of shape `global` from `src` to `dst`
/// partitioning, seen from `rank`. Entries with empty intersection are
/// omitted; the self entry (if any) is a local copy.
inline std::vector<PlanEntry> repartition_plan(const Partition& src, const Partition& dst, std::span<const Dim> global,
                                               std::size_t rank) {
  if (src.dim() == dst.dim()) throw ShapeMismatch("re-partition requires distinct source and target dims");
  if (src.num_ranks() != dst.num_ranks()) throw ShapeMismatch("re-partition across different rank counts");
  if (rank >= src.num_ranks()) throw ShapeMismatch("rank out of range");
  std::optional<std::size_t> a_axis, b_axis;
  for (std::size_t d = 0; d < global.size(); ++d) {
    if (global[d].label == src.dim()) a_axis = d;
    if (global[d].label == dst.dim()) b_axis = d;
  }
  if (!a_axis || !b_axis) throw ShapeMismatch("partitioned dims not present in " + dims_to_string(global));
  if (global[*a_axis].extent != src.global_extent() || global[*b_axis].extent != dst.global_extent()) {
    throw ShapeMismatch("partition extents disagree with tensor shape " + dims_to_string(global));
  }

  Box full;
  for (const auto& d : global) full.ranges.push_back({0, d.extent});
  auto slab = [&](std::size_t axis, const BlockRange& r) {
    Box b = full;
    b.ranges[axis] = r;
    return b;
  };

  std::vector<PlanEntry> plan;
  for (std::size_t peer = 0; peer < src.num_ranks(); ++peer) {
    auto send = box_intersection(slab(*a_axis, src.range(rank)), slab(*b_axis, dst.range(peer)));
    auto recv = box_intersection(slab(*a_axis, src.range(peer)), slab(*b_axis, dst.range(rank)));
    if (!send && !recv) continue;
    // Both are non-empty for 1-D block partitions over distinct dims.
    if (!send || !recv) throw ShapeMismatch("asymmetric re-partition routing");
    plan.push_back({peer, std::move(*send), std::move(*recv)});
  }
  return plan;
}

/// Global box covered by `rank`'s slab of a tensor of shape `global`.
inline Box slab_box(const Partition& p, std::span<const Dim> global, std::size_t rank) {
  Box b;
  for (const auto& d : global) b.ranges.push_back(d.label == p.dim() ? p.range(rank) : BlockRange{0, d.extent});
  return b;
}

namespace detail {

/// Visits every contiguous last-dim run of `sub` inside a tensor covering
/// `frame`, calling f(frame_offset, sub_offset, run_length).
template <class F>
void for_each_run(const Box& frame, const Box& sub, F&& f) {
  const std::size_t nd = frame.ranges.size();
  if (sub.ranges.size() != nd) throw ShapeMismatch("block rank mismatch");
  for (std::size_t d = 0; d < nd; ++d) {
    if (sub.ranges[d].start < frame.ranges[d].start || sub.ranges[d].stop > frame.ranges[d].stop) {
      throw ShapeMismatch("sub-block outside of local frame");
    }
  }
  if (sub.volume() == 0) return;
  std::vector<std::size_t> fstride(nd, 1), sstride(nd, 1);
  for (std::size_t d = nd; d-- > 1;) {
    fstride[d - 1] = fstride[d] * frame.ranges[d].size();
    sstride[d - 1] = sstride[d] * sub.ranges[d].size();
  }
  const std::size_t run = sub.ranges[nd - 1].size();
  std::vector<std::size_t> idx(nd, 0);  // relative to sub start, last dim fixed at 0
  while (true) {
    std::size_t foff = 0, soff = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      foff += (sub.ranges[d].start - frame.ranges[d].start + idx[d]) * fstride[d];
      soff += idx[d] * sstride[d];
    }
    f(foff, soff, run);
    std::size_t d = nd - 1;
    while (d-- > 0) {
      if (++idx[d] < sub.ranges[d].size()) break;
      idx[d] = 0;
    }
    if (d == static_cast<std::size_t>(-1)) return;
  }
}

}  // namespace detail

/// Copies `sub` (global coordinates) out of `local`, which covers `frame`.
template <Scalar T>
Tensor<T> extract_block(const Tensor<T>& local, const Box& frame, const Box& sub) {
  std::vector<Dim> dims = local.dims();
  for (std::size_t d = 0; d < dims.size(); ++d) dims[d].extent = sub.ranges.at(d).size();
  Tensor<T> out(std::move(dims));
  const T* src = local.data().data();
  T* dst = out.data().data();
  detail::for_each_run(frame, sub, [&](std::size_t f, std::size_t s, std::size_t n) {
    std::copy_n(src + f, n, dst + s);
  });
  return out;
}

/// Writes `block` into the `sub` region of `local`, which covers `frame`.
template <Scalar T>
void insert_block(Tensor<T>& local, const Box& frame, const Box& sub, const Tensor<T>& block) {
  if (block.size() != sub.volume()) throw ShapeMismatch("block size does not match destination region");
  const T* src = block.data().data();
  T* dst = local.data().data();
  detail::for_each_run(frame, sub, [&](std::size_t f, std::size_t s, std::size_t n) {
    std::copy_n(src + s, n, dst + f);
  });
}

}  // namespace tpfno
