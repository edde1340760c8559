// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"
#include "tpfno/comm/launch.hpp"

using namespace tpfno;
using namespace std::chrono_literals;
using tpfno::test::random_tensor;

namespace {

Tensor<double> ones(std::vector<Dim> dims) {
  Tensor<double> t(std::move(dims));
  for (auto& v : t.data()) v = 1.0;
  return t;
}

const std::vector<Dim> kGrid88{{DimLabel::x, 8}, {DimLabel::y, 8}};

Tensor<double> global88() {
  Tensor<double> g(kGrid88);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.5 * static_cast<double>(i) - 3.0;
  return g;
}

Tensor<double> slab_of(const Tensor<double>& g, const Partition& p, std::size_t r) {
  Box full;
  for (const auto& d : g.dims()) full.ranges.push_back({0, d.extent});
  return extract_block(g, full, slab_box(p, g.dims(), r));
}

}  // namespace

TEST(CommStats, FreshCountersAreZero) {
  auto res = run_inproc(3, [](Communicator& c) { return c.comm_report(); });
  for (const auto& s : res.values) {
    for (const auto& k : s.counters) {
      EXPECT_EQ(k.calls, 0u);
      EXPECT_EQ(k.elements, 0u);
      EXPECT_EQ(k.bytes, 0u);
    }
  }
}

TEST(CommStats, CsvHeader) {
  std::ostringstream os;
  write_stats_csv(os, CommStats{});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "primitive,calls,elements,bytes");
}

TEST(Broadcast, SingleRankSendsNothing) {
  auto res = run_inproc(1, [](Communicator& c) {
    Tensor<double> w({{DimLabel::c, 2}, {DimLabel::c, 2}}, {1, 2, 3, 4});
    EXPECT_EQ(c.broadcast(w), w);
    return c.comm_report()[Primitive::broadcast];
  });
  EXPECT_EQ(res.values[0].calls, 1u);
  EXPECT_EQ(res.values[0].elements, 0u);
}

TEST(Broadcast, CountsAndBitEqualCopies) {
  auto res = run_inproc(4, [](Communicator& c) {
    std::mt19937_64 rng(c.rank() == 0 ? 7 : 1000 + c.rank());
    auto mine = random_tensor<double>({{DimLabel::c, 2}, {DimLabel::c, 2}}, rng);
    return c.broadcast(mine);
  });
  for (std::size_t r = 1; r < 4; ++r) EXPECT_EQ(res.values[r], res.values[0]);
  const auto total = res.total_stats()[Primitive::broadcast];
  EXPECT_EQ(res.stats[0][Primitive::broadcast].elements, 12u);
  EXPECT_EQ(total.elements, 12u);
  EXPECT_EQ(total.bytes, 96u);
}

TEST(Broadcast, ShapeDisagreementIsDetected) {
  EXPECT_THROW(run_inproc(2,
                          [](Communicator& c) {
                            Tensor<double> t({{DimLabel::x, c.rank() == 0 ? 3u : 4u}});
                            c.broadcast(t);
                          }),
               CollectiveMismatch);
}

TEST(ReduceSum, OnesSumToRankCount) {
  auto res = run_inproc(4, [](Communicator& c) { return c.reduce_sum(ones({{DimLabel::x, 5}})); });
  for (const auto& v : res.values[0].data()) EXPECT_EQ(v, 4.0);
  for (std::size_t r = 1; r < 4; ++r) EXPECT_TRUE(res.values[r].empty());
}

TEST(ReduceSum, SingleRankIsIdentity) {
  auto res = run_inproc(1, [](Communicator& c) {
    Tensor<double> t({{DimLabel::x, 2}}, {1.5, -2});
    return c.reduce_sum(t);
  });
  EXPECT_EQ(res.values[0], Tensor<double>({{DimLabel::x, 2}}, {1.5, -2}));
}

TEST(ReduceSum, ShapeDisagreementIsDetected) {
  EXPECT_THROW(run_inproc(3,
                          [](Communicator& c) {
                            Tensor<double> t({{DimLabel::x, c.rank() == 2 ? 3u : 4u}});
                            c.reduce_sum(t);
                          }),
               CollectiveMismatch);
}

// <B x, {y_r}> = <x, sum_r y_r>
TEST(ReduceSum, AdjointOfBroadcast) {
  for (std::size_t p : {1u, 2u, 4u}) {
    auto res = run_inproc(p, [](Communicator& c) {
      double worst = 0;
      for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 rx(100 + trial), ry(200 + 31 * trial + c.rank());
        auto x = random_tensor<double>({{DimLabel::c, 3}, {DimLabel::c, 4}}, rx);
        auto y = random_tensor<double>(x.dims(), ry);
        const double lhs = c.allreduce_sum(inner(c.broadcast(x), y));
        auto s = c.reduce_sum(y);
        const double rhs = c.rank() == 0 ? inner(x, s) : 0.0;
        const double rhs_all = c.allreduce_sum(rhs);
        worst = std::max(worst, std::abs(lhs - rhs_all) / std::max(1.0, std::abs(lhs)));
      }
      return worst;
    });
    for (double w : res.values) EXPECT_LT(w, 1e-12);
  }
}

TEST(Repartition, EightByEightMovesTwelveElementsPerRank) {
  const auto g = global88();
  auto res = run_inproc(4, [&](Communicator& c) {
    Partition px(DimLabel::x, 8, 4), py(DimLabel::y, 8, 4);
    auto y = c.repartition(slab_of(g, px, c.rank()), px, py);
    EXPECT_EQ(y, slab_of(g, py, c.rank()));
    auto back = c.repartition(y, py, px);
    EXPECT_EQ(back, slab_of(g, px, c.rank()));
    return c.comm_report()[Primitive::repartition];
  });
  for (const auto& s : res.values) {
    EXPECT_EQ(s.calls, 2u);
    EXPECT_EQ(s.elements, 24u);
    EXPECT_EQ(s.bytes, 192u);
  }
}

TEST(Repartition, SingleCallBytes) {
  const auto g = global88();
  auto res = run_inproc(4, [&](Communicator& c) {
    Partition px(DimLabel::x, 8, 4), py(DimLabel::y, 8, 4);
    c.repartition(slab_of(g, px, c.rank()), px, py);
    return c.comm_report()[Primitive::repartition].bytes;
  });
  for (auto b : res.values) EXPECT_EQ(b, 96u);
}

TEST(Repartition, PreservesGlobalValuesUnevenSplit) {
  std::mt19937_64 rng(3);
  auto g = random_tensor<std::complex<double>>({{DimLabel::b, 2}, {DimLabel::x, 11}, {DimLabel::ky, 7}, {DimLabel::kz, 3}}, rng);
  auto res = run_inproc(3, [&](Communicator& c) {
    Partition px(DimLabel::x, 11, 3), pk(DimLabel::ky, 7, 3);
    Box full;
    for (const auto& d : g.dims()) full.ranges.push_back({0, d.extent});
    auto local = extract_block(g, full, slab_box(px, g.dims(), c.rank()));
    auto moved = c.repartition(local, px, pk);
    auto assembled = c.gather(moved, pk);
    if (c.rank() == 0) {
      EXPECT_EQ(assembled, g);
    }
  });
  (void)res;
}

// <R x, y> = <x, R^T y> with R^T the reverse re-partition.
TEST(Repartition, AdjointIsReverseRepartition) {
  auto res = run_inproc(4, [](Communicator& c) {
    Partition px(DimLabel::x, 9, 4), pk(DimLabel::ky, 6, 4);
    const std::vector<Dim> global{{DimLabel::b, 1}, {DimLabel::c, 2}, {DimLabel::x, 9}, {DimLabel::ky, 6}};
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::mt19937_64 rng(1000 * trial + c.rank());
      auto x = random_tensor<std::complex<double>>(px.local_dims(global, c.rank()), rng);
      auto y = random_tensor<std::complex<double>>(pk.local_dims(global, c.rank()), rng);
      const double lhs = c.allreduce_sum(inner(c.repartition(x, px, pk), y));
      const double rhs = c.allreduce_sum(inner(x, c.repartition(y, pk, px)));
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    }
    return worst;
  });
  for (double w : res.values) EXPECT_LT(w, 1e-12);
}

TEST(Repartition, InconsistentLocalBlockIsRejected) {
  EXPECT_THROW(run_inproc(2,
                          [](Communicator& c) {
                            Partition px(DimLabel::x, 8, 2), py(DimLabel::y, 8, 2);
                            Tensor<double> wrong({{DimLabel::x, 3}, {DimLabel::y, 8}});
                            c.repartition(wrong, px, py);
                          }),
               ShapeMismatch);
}

TEST(Collectives, MissingParticipantTimesOut) {
  EXPECT_THROW(run_inproc(
                   2,
                   [](Communicator& c) {
                     if (c.rank() == 1) return;
                     c.reduce_sum(ones({{DimLabel::x, 2}}));
                   },
                   200ms),
               CommTimeout);
}

TEST(Collectives, MismatchedOrderNeverGivesWrongAnswer) {
  // Rank 0 broadcasts while rank 1 reduces: nothing is received by a matching call.
  EXPECT_THROW(run_inproc(
                   2,
                   [](Communicator& c) {
                     auto t = ones({{DimLabel::x, 2}});
                     if (c.rank() == 0) {
                       c.broadcast(t);
                     } else {
                       c.reduce_sum(t);
                     }
                   },
                   200ms),
               CollectiveMismatch);
}

TEST(Collectives, ScatterGatherRoundTrip) {
  const auto g = global88();
  auto res = run_inproc(3, [&](Communicator& c) {
    Partition px(DimLabel::x, 8, 3);
    auto mine = c.scatter(c.rank() == 0 ? g : Tensor<double>(g.dims()), px);
    EXPECT_EQ(mine, slab_of(g, px, c.rank()));
    c.barrier();
    return c.gather(mine, px);
  });
  EXPECT_EQ(res.values[0], g);
}

TEST(Collectives, CheckIdenticalDetectsDivergence) {
  EXPECT_NO_THROW(run_inproc(3, [](Communicator& c) { c.check_identical(42, "value"); }));
  EXPECT_THROW(run_inproc(3, [](Communicator& c) { c.check_identical(c.rank() == 2 ? 1 : 42, "value"); }),
               ReplicationError);
}

TEST(Collectives, StatsAndResultsDeterministicAcrossRuns) {
  auto once = [] {
    return run_inproc(4, [](Communicator& c) {
      std::mt19937_64 rng(5 + c.rank());
      Partition px(DimLabel::x, 10, 4), py(DimLabel::y, 6, 4);
      auto x = random_tensor<double>(px.local_dims({{DimLabel::x, 10}, {DimLabel::y, 6}}, c.rank()), rng);
      auto y = c.repartition(x, px, py);
      auto s = c.allreduce_sum(y.size() > 0 ? inner(y, y) : 0.0);
      return std::make_pair(y, s);
    });
  };
  auto a = once(), b = once();
  EXPECT_EQ(a.values, b.values);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t k = 0; k < kNumPrimitives; ++k) {
      EXPECT_EQ(a.stats[r].counters[k].elements, b.stats[r].counters[k].elements);
      EXPECT_EQ(a.stats[r].counters[k].calls, b.stats[r].counters[k].calls);
    }
  }
}

// ---------------------------------------------------------------------------
// Socket transport

TEST(SocketFrame, LayoutIsLengthTagPayload) {
  const Bytes payload{std::byte{0xAA}, std::byte{0xBB}, std::byte{0xCC}};
  const Bytes f = encode_frame(0x0102030405060708ull, payload);
  ASSERT_EQ(f.size(), kFrameHeaderBytes + 3);
  const std::vector<unsigned> expect{3, 0, 0, 0, 8, 7, 6, 5, 4, 3, 2, 1, 0xAA, 0xBB, 0xCC};
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(std::to_integer<unsigned>(f[i]), expect[i]);
  const auto h = decode_frame_header(std::span<const std::byte, kFrameHeaderBytes>(f.data(), kFrameHeaderBytes));
  EXPECT_EQ(h.length, 3u);
  EXPECT_EQ(h.tag, 0x0102030405060708ull);
}

TEST(SocketTransport, CollectivesMatchInProcess) {
  const auto dir = make_rendezvous_dir();
  constexpr std::size_t P = 3;
  const auto g = global88();
  std::vector<Tensor<double>> got(P);
  std::vector<CommStats> stats(P);
  std::vector<std::exception_ptr> err(P);
  std::vector<std::thread> threads;
  for (std::size_t r = 0; r < P; ++r) {
    threads.emplace_back([&, r] {
      try {
        SocketTransport t(r, P, dir);
        Communicator c(t, r, 20s);
        Partition px(DimLabel::x, 8, P), py(DimLabel::y, 8, P);
        auto y = c.repartition(slab_of(g, px, r), px, py);
        auto w = c.broadcast(r == 0 ? g : Tensor<double>(g.dims()));
        EXPECT_EQ(w, g);
        got[r] = c.gather(y, py);
        c.barrier();
        stats[r] = c.comm_report();
      } catch (...) {
        err[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : err)
    if (e) std::rethrow_exception(e);
  std::filesystem::remove_all(dir);
  EXPECT_EQ(got[0], g);

  auto ref = run_inproc(P, [&](Communicator& c) {
    Partition px(DimLabel::x, 8, P), py(DimLabel::y, 8, P);
    auto y = c.repartition(slab_of(g, px, c.rank()), px, py);
    c.broadcast(c.rank() == 0 ? g : Tensor<double>(g.dims()));
    c.gather(y, py);
    c.barrier();
  });
  for (std::size_t r = 0; r < P; ++r) {
    for (std::size_t k = 0; k < kNumPrimitives; ++k) EXPECT_EQ(stats[r].counters[k].bytes, ref.stats[r].counters[k].bytes);
  }
}
