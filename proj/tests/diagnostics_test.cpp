#include <gtest/gtest.h>

#include "rosslink/diagnostics/gradsuite.hpp"
#include "rosslink/diagnostics/oracles.hpp"

#include <algorithm>

using namespace rosslink;
using namespace rosslink::diagnostics;

TEST(GradSuite, CoversEveryPiece) {
  const auto items = grad_suite_items();
  auto count = [&](const std::string& group) {
    return std::count_if(items.begin(), items.end(), [&](const auto& s) { return s.rfind(group + "/", 0) == 0; });
  };
  EXPECT_EQ(count("op"), static_cast<long>(ad::all_op_kinds().size()));
  EXPECT_EQ(count("block"), 8);
  EXPECT_EQ(count("network"), 7);
  EXPECT_EQ(count("loss"), 6);
}

TEST(GradSuite, PassesAtReducedScale) {
  GradSuiteOptions o;
  o.points = 8;
  const auto r = run_grad_suite(o);
  for (const auto& i : r.items) {
    EXPECT_TRUE(i.passed) << i.group << "/" << i.name << ": " << i.failure;
    EXPECT_EQ(i.points, 8);
    EXPECT_GT(i.coords, 0u) << i.name;
    EXPECT_LE(i.max_rel_error, 1e-4) << i.name;
  }
  EXPECT_TRUE(r.passed());
}

TEST(GradSuite, InjectedFaultFailsOnlyAffectedItems) {
  GradSuiteOptions o;
  o.points = 3;
  o.groups = {"op", "loss"};
  o.fault = ad::OpKind::sigmoid;
  const auto r = run_grad_suite(o);
  EXPECT_FALSE(r.passed());
  for (const auto& i : r.items) EXPECT_EQ(i.passed, i.name != "sigmoid") << i.name;
  // The fault is lifted when the run ends.
  o.fault.reset();
  o.groups = {"op"};
  EXPECT_TRUE(run_grad_suite(o).passed());
}

TEST(GradSuite, Deterministic) {
  GradSuiteOptions o;
  o.points = 2;
  o.groups = {"network"};
  const auto a = run_grad_suite(o), b = run_grad_suite(o);
  ASSERT_EQ(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_EQ(a.items[i].max_rel_error, b.items[i].max_rel_error);
    EXPECT_EQ(a.items[i].coords, b.items[i].coords);
  }
}

TEST(Oracles, LossesChannelAndCodingPass) {
  for (const auto& rows : {loss_oracle_checks(50), channel_checks(100'000, 20'000), coding_checks()}) {
    for (const auto& r : rows) EXPECT_TRUE(r.passed) << r.name << ": " << r.measured << " > " << r.tolerance;
  }
}
