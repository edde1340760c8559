// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>

#include "tpfno/partition.hpp"

using namespace tpfno;

TEST(BlockDecompose, RemainderFirst) {
  const auto r = block_decompose(10, 4);
  ASSERT_EQ(r.size(), 4u);
  const std::vector<std::size_t> sizes{r[0].size(), r[1].size(), r[2].size(), r[3].size()};
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_EQ(r[0].start, 0u);
  EXPECT_EQ(r[3].stop, 10u);
}

TEST(BlockDecompose, SingleRankIsIdentity) {
  const auto r = block_decompose(8, 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].start, 0u);
  EXPECT_EQ(r[0].stop, 8u);
}

TEST(BlockDecompose, InfeasibleCounts) {
  EXPECT_THROW(block_decompose(3, 4), InfeasiblePartition);
  EXPECT_THROW(block_decompose(3, 0), InfeasiblePartition);
}

TEST(BlockDecompose, BalancedAndContiguousForAllSmallCases) {
  for (std::size_t n = 1; n <= 40; ++n) {
    for (std::size_t p = 1; p <= n; ++p) {
      const auto r = block_decompose(n, p);
      std::size_t lo = n, hi = 0, expect_start = 0;
      for (std::size_t i = 0; i < p; ++i) {
        EXPECT_EQ(r[i].start, expect_start);
        EXPECT_FALSE(r[i].empty());
        expect_start = r[i].stop;
        lo = std::min(lo, r[i].size());
        hi = std::max(hi, r[i].size());
        if (i > 0) {
          EXPECT_LE(r[i].size(), r[i - 1].size());
        }
      }
      EXPECT_EQ(expect_start, n);
      EXPECT_LE(hi - lo, 1u);
    }
  }
}

TEST(RangeIntersection, Cases) {
  auto a = range_intersection({2, 5}, {4, 9});
  ASSERT_TRUE(a);
  EXPECT_EQ(a->start, 4u);
  EXPECT_EQ(a->stop, 5u);
  EXPECT_FALSE(range_intersection({0, 2}, {2, 4}));
  auto s = range_intersection({3, 7}, {3, 7});
  ASSERT_TRUE(s);
  EXPECT_EQ(s->start, 3u);
  EXPECT_EQ(s->stop, 7u);
}

namespace {

std::vector<Dim> grid2(std::size_t nx, std::size_t ny) { return {{DimLabel::x, nx}, {DimLabel::y, ny}}; }

// Owner of global index (i, j) under a block partition, found by scanning ranges.
std::size_t owner(const Partition& p, std::size_t i) {
  for (std::size_t r = 0; r < p.num_ranks(); ++r)
    if (p.range(r).contains(i)) return r;
  return p.num_ranks();
}

}  // namespace

TEST(RepartitionPlan, EightByEightFourRanks) {
  const auto g = grid2(8, 8);
  Partition px(DimLabel::x, 8, 4), py(DimLabel::y, 8, 4);
  for (std::size_t rank = 0; rank < 4; ++rank) {
    const auto plan = repartition_plan(px, py, g, rank);
    std::size_t off = 0, local = 0;
    for (const auto& e : plan) {
      EXPECT_EQ(e.send.volume(), 4u);
      (e.peer == rank ? local : off) += e.send.volume();
    }
    EXPECT_EQ(local, 4u);
    EXPECT_EQ(off, 12u);
  }
}

TEST(RepartitionPlan, SingleRankIsLocalCopy) {
  const auto g = grid2(5, 7);
  const auto plan = repartition_plan(Partition(DimLabel::x, 5, 1), Partition(DimLabel::y, 7, 1), g, 0);
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0].peer, 0u);
  EXPECT_EQ(plan[0].send.volume(), 35u);
}

TEST(RepartitionPlan, Errors) {
  const auto g = grid2(8, 8);
  EXPECT_THROW(repartition_plan(Partition(DimLabel::x, 8, 2), Partition(DimLabel::x, 8, 2), g, 0), ShapeMismatch);
  EXPECT_THROW(repartition_plan(Partition(DimLabel::x, 8, 2), Partition(DimLabel::y, 6, 2), g, 0), ShapeMismatch);
  EXPECT_THROW(repartition_plan(Partition(DimLabel::x, 8, 2), Partition(DimLabel::y, 8, 4), g, 0), ShapeMismatch);
  EXPECT_THROW(repartition_plan(Partition(DimLabel::x, 8, 2), Partition(DimLabel::z, 8, 2), g, 0), ShapeMismatch);
}

// Brute force: every global index is sent exactly once, by its src owner, to
// its dst owner; and the plan is symmetric between every pair of ranks.
TEST(RepartitionPlan, TilesGlobalIndexSetExactlyOnce) {
  for (std::size_t nx = 1; nx <= 16; ++nx) {
    for (std::size_t ny = 1; ny <= 16; ny += 3) {
      for (std::size_t p = 1; p <= std::min<std::size_t>({8, nx, ny}); ++p) {
        const auto g = grid2(nx, ny);
        Partition px(DimLabel::x, nx, p), py(DimLabel::y, ny, p);
        std::vector<int> sent(nx * ny, 0), recvd(nx * ny, 0);
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> send_vol, recv_vol;
        for (std::size_t rank = 0; rank < p; ++rank) {
          for (const auto& e : repartition_plan(px, py, g, rank)) {
            for (std::size_t i = e.send.ranges[0].start; i < e.send.ranges[0].stop; ++i)
              for (std::size_t j = e.send.ranges[1].start; j < e.send.ranges[1].stop; ++j) {
                ++sent[i * ny + j];
                EXPECT_EQ(owner(px, i), rank);
                EXPECT_EQ(owner(py, j), e.peer);
              }
            for (std::size_t i = e.recv.ranges[0].start; i < e.recv.ranges[0].stop; ++i)
              for (std::size_t j = e.recv.ranges[1].start; j < e.recv.ranges[1].stop; ++j) {
                ++recvd[i * ny + j];
                EXPECT_EQ(owner(px, i), e.peer);
                EXPECT_EQ(owner(py, j), rank);
              }
            send_vol[{rank, e.peer}] = e.send.volume();
            recv_vol[{e.peer, rank}] = e.recv.volume();
          }
        }
        for (std::size_t k = 0; k < nx * ny; ++k) {
          ASSERT_EQ(sent[k], 1) << nx << "x" << ny << " P=" << p;
          ASSERT_EQ(recvd[k], 1) << nx << "x" << ny << " P=" << p;
        }
        EXPECT_EQ(send_vol, recv_vol);
      }
    }
  }
}

// Routing a tagged tensor x->y and back with extract/insert restores every rank's block.
TEST(RepartitionPlan, RoundTripRestoresOrigin) {
  const std::vector<Dim> g{{DimLabel::b, 2}, {DimLabel::x, 7}, {DimLabel::y, 5}};
  const std::size_t p = 3;
  Partition px(DimLabel::x, 7, p), py(DimLabel::y, 5, p);
  Tensor<double> global(g);
  for (std::size_t i = 0; i < global.size(); ++i) global[i] = static_cast<double>(i);
  Box full;
  for (const auto& d : g) full.ranges.push_back({0, d.extent});

  auto move = [&](const std::vector<Tensor<double>>& src_blocks, const Partition& a, const Partition& b) {
    std::vector<Tensor<double>> out;
    for (std::size_t r = 0; r < p; ++r) out.emplace_back(b.local_dims(g, r));
    for (std::size_t r = 0; r < p; ++r) {
      for (const auto& e : repartition_plan(a, b, g, r)) {
        auto blk = extract_block(src_blocks[r], slab_box(a, g, r), e.send);
        insert_block(out[e.peer], slab_box(b, g, e.peer), e.send, blk);
      }
    }
    return out;
  };
  std::vector<Tensor<double>> xs;
  for (std::size_t r = 0; r < p; ++r) xs.push_back(extract_block(global, full, slab_box(px, g, r)));
  const auto ys = move(xs, px, py);
  for (std::size_t r = 0; r < p; ++r) EXPECT_EQ(ys[r], extract_block(global, full, slab_box(py, g, r)));
  const auto back = move(ys, py, px);
  EXPECT_EQ(back, xs);
}

TEST(Partition, LocalDimsFollowRanges) {
  Partition p(DimLabel::x, 10, 4);
  const std::vector<Dim> g{{DimLabel::b, 1}, {DimLabel::x, 10}, {DimLabel::y, 3}};
  EXPECT_EQ(p.local_dims(g, 0)[1].extent, 3u);
  EXPECT_EQ(p.local_dims(g, 3)[1].extent, 2u);
  EXPECT_EQ(p.local_dims(g, 3)[2].extent, 3u);
}
