// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "tpfno/taskpool/pool.hpp"

namespace fs = std::filesystem;
using namespace tpfno;

namespace {

fs::path fresh_root(const std::string& name) {
  const auto root = fs::temp_directory_path() / ("tpfno_taskpool_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(root);
  return root;
}

}  // namespace

TEST(ObjectStore, WriteOnceAndRoundTrip) {
  ObjectStore s(fresh_root("store"));
  EXPECT_TRUE(s.put("a/b", std::string_view("payload")));
  EXPECT_FALSE(s.put("a/b", std::string_view("other")));
  ASSERT_TRUE(s.get("a/b"));
  EXPECT_EQ(to_string(*s.get("a/b")), "payload");
  EXPECT_FALSE(s.get("missing"));
  EXPECT_EQ(s.counters().writes, 1u);
  EXPECT_THROW(s.put("../escape", std::string_view("x")), StoreWriteError);
  fs::remove_all(s.root());
}

TEST(TaskPool, SingleNoopTask) {
  TaskPool pool(fresh_root("noop"), 1);
  const auto h = pool.submit_job("noop", std::vector<std::vector<TaskArg>>(1));
  ASSERT_EQ(h.refs.size(), 1u);
  EXPECT_TRUE(pool.fetch(h.refs[0]).empty());
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, HelloMapWritesDistinctOutputs) {
  TaskPool pool(fresh_root("hello"), 2);
  std::vector<std::vector<TaskArg>> args;
  for (int i = 0; i < 4; ++i) args.push_back({TaskArg::text("worker " + std::to_string(i))});
  const auto h = pool.submit_job("hello", args, {}, "hello");
  const auto outs = pool.fetch_all(h);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(to_string(outs[i]), "hello from worker " + std::to_string(i));
  for (int i = 0; i < 4; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "t%06d", i);
    for (const char* f : {"spec", "args", "out"})
      EXPECT_TRUE(fs::exists(pool.store().root() / "jobs/hello/tasks" / id / f)) << id << '/' << f;
  }
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, UnknownCallableRejectedAtSubmit) {
  TaskPool pool(fresh_root("unknown"), 1);
  EXPECT_THROW(pool.submit_job("no-such-task", std::vector<std::vector<TaskArg>>(1)), UnknownCallable);
  EXPECT_EQ(pool.store().counters().writes, 0u);
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, FailurePropagatesWorkerMessage) {
  TaskPool pool(fresh_root("fail"), 1);
  const auto h = pool.submit_job("fail", {{TaskArg::text("disk on fire")}});
  try {
    pool.fetch(h.refs[0]);
    FAIL() << "fetch should throw";
  } catch (const TaskFailed& e) {
    EXPECT_NE(std::string(e.what()).find("disk on fire"), std::string::npos);
  }
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, FetchTimesOut) {
  TaskPool pool(fresh_root("timeout"), 1);
  const auto h = pool.submit_job("sleep", {{TaskArg::text("1")}});
  EXPECT_THROW(pool.fetch(h.refs[0], std::chrono::milliseconds(20)), FetchTimeout);
  pool.fetch(h.refs[0]);
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, SecondFetchMakesNoStoreReads) {
  TaskPool pool(fresh_root("cache"), 1);
  const auto h = pool.submit_job("hello", {{TaskArg::text("x")}});
  const auto first = pool.fetch(h.refs[0]);
  const auto reads = pool.store().counters().reads;
  const RemoteRef copy = h.refs[0];
  EXPECT_EQ(pool.fetch(copy), first);
  EXPECT_EQ(pool.store().counters().reads, reads);
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, BroadcastIsWrittenOnceAndReadableByAllTasks) {
  TaskPool pool(fresh_root("bcast"), 2);
  Bytes payload(4096);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = std::byte(i * 7 % 251);
  const auto before = pool.store().counters().writes;
  const auto ref = pool.broadcast_value(payload);
  EXPECT_EQ(pool.store().counters().writes, before + 1);
  EXPECT_EQ(pool.fetch(ref), payload);

  const std::vector<std::vector<TaskArg>> args(64, {TaskArg::ref(ref)});
  const auto h = pool.submit_job("checksum", args);
  // spec + args per task; the payload itself is not uploaded again.
  EXPECT_EQ(h.uploads, 2u * 64u);
  const auto outs = pool.fetch_all(h);
  std::uint64_t expect = 1469598103934665603ull;
  for (std::byte v : payload) expect = (expect ^ std::to_integer<std::uint8_t>(v)) * 1099511628211ull;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(expect));
  for (const auto& o : outs) EXPECT_EQ(to_string(o), hex);
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, SharedPayloadUploadedOncePerJob) {
  TaskPool pool(fresh_root("shared"), 2);
  const std::vector<std::vector<TaskArg>> args(8, {TaskArg::text("tail")});
  const auto h = pool.submit_job("checksum", args, {to_bytes("head")});
  EXPECT_EQ(h.uploads, 1u + 2u * 8u);
  const auto outs = pool.fetch_all(h);
  for (const auto& o : outs) EXPECT_EQ(o, outs.front());
  fs::remove_all(pool.store().root());
}

TEST(TaskPool, RerunOfCompletedJobKeepsOutputs) {
  TaskPool pool(fresh_root("rerun"), 1);
  const auto h1 = pool.submit_job("sleep", {{TaskArg::text("0.01")}}, {}, "same");
  const auto first = pool.fetch(h1.refs[0]);
  const auto h2 = pool.submit_job("sleep", {{TaskArg::text("0.01")}}, {}, "same");
  EXPECT_EQ(h2.uploads, 0u);
  EXPECT_EQ(pool.fetch(h2.refs[0]), first);
  fs::remove_all(pool.store().root());
}

TEST(Efficiency, Formula) {
  const std::vector<double> eight(8, 2.0);
  EXPECT_NEAR(weak_scaling_efficiency(eight, 8, 2.05), 2.0 / 2.05, 1e-15);
  const std::vector<double> one{1.5};
  EXPECT_DOUBLE_EQ(weak_scaling_efficiency(one, 1, 1.5), 1.0);
  EXPECT_THROW(weak_scaling_efficiency(one, 0, 1.0), ConfigError);
}

TEST(LinearFit, ExactLine) {
  const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
  const auto f = linear_fit(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(TaskPool, SleepTasksRunInParallel) {
  TaskPool pool(fresh_root("sleep"), 4);
  const auto d = sleep_demo(pool, 4, 0.5);
  EXPECT_EQ(d.durations.size(), 4u);
  for (double t : d.durations) EXPECT_GE(t, 0.5);
  EXPECT_LT(d.makespan, 1.5);
  fs::remove_all(pool.store().root());
}
