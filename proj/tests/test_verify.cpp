#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "fedcyc/verify.hpp"

using namespace fedcyc;

TEST(Verify, SuiteNamesRoundTrip) {
  for (Suite s : {Suite::decomposition, Suite::gradcheck, Suite::equivalence, Suite::codec})
    EXPECT_EQ(parse_suite(suite_name(s)), s);
  EXPECT_FALSE(parse_suite("nope").has_value());
}

TEST(Verify, InformationalChecksDoNotFailTheSuite) {
  SuiteReport r{"x", {}};
  EXPECT_FALSE(r.passed());  // nothing checked is not a pass
  r.checks.push_back({.name = "a", .passed = true});
  r.checks.push_back({.name = "b", .passed = false, .informational = true});
  EXPECT_TRUE(r.passed());
  r.checks.push_back({.name = "c", .passed = false});
  EXPECT_FALSE(r.passed());
}

TEST(Verify, ReportJsonIsMachineReadable) {
  const auto r = verify_codec(20);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["suite"], "codec");
  EXPECT_TRUE(j["passed"].get<bool>());
  ASSERT_EQ(j["checks"].size(), r.checks.size());
  EXPECT_EQ(j["checks"][0]["cases"], 20);
}

TEST(Verify, DecompositionSmallRun) {
  const auto r = verify_decomposition(6);
  EXPECT_TRUE(r.passed()) << r.to_json();
}

TEST(Verify, EquivalenceShortRun) {
  const auto r = verify_equivalence(3);
  EXPECT_TRUE(r.passed()) << r.to_json();
  // tcp and in-process comparisons for both optimizers, plus switchable diagnostics
  EXPECT_EQ(r.checks.size(), 8u);
}

TEST(Verify, FixtureMessageIsStable) {
  const auto m = fixture_message();
  EXPECT_EQ(encode(m).size(), 43u);
  std::mt19937_64 a(5), b(5);
  EXPECT_TRUE(bitwise_equal(random_message(a), random_message(b)));
}
