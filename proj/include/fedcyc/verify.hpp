#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fedcyc/codec.hpp"
#include "fedcyc/gradcheck.hpp"
#include "fedcyc/tape.hpp"

namespace fedcyc {

/// Step levels 1e-3 .. 1e-7; the best-agreeing level is compared.
inline GradCheckOptions oracle_options() {
  GradCheckOptions o;
  o.step = 1e-3;
  o.max_refinements = 4;
  return o;
}

/// A randomized scalar graph exercising one op, with its parameters.
struct OpGradientCase {
  std::vector<BasicNamedTensor<double>> params;
  ScalarGraph graph;
};

OpGradientCase op_gradient_case(OpKind kind, std::uint64_t seed);

/// Random groups, names (arbitrary bytes), shapes and payloads, including
/// signed zeros.
GradientMessage random_message(std::mt19937_64& rng);

/// The two-value fixture: one D_Y group holding "w" = [1, -1].
GradientMessage fixture_message();

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Diagnostics never fail a suite.
  bool informational = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool passed() const;
  std::string to_json() const;
};

enum class Suite { decomposition, gradcheck, equivalence, codec };

std::string_view suite_name(Suite s);
std::optional<Suite> parse_suite(std::string_view text);

/// |central - (local X + local Y)| / max(|central|, 1) <= 1e-6 and
/// per-tensor gradient-sum error <= 1e-5, in training precision, over
/// `seeds` random models, batches and weights in both gan modes.
SuiteReport verify_decomposition(std::size_t seeds = 100);

/// Every differentiable op (`cases_per_op` random cases each) and both
/// local objectives against the 64-bit finite-difference oracle at 1e-4.
SuiteReport verify_gradcheck(std::size_t cases_per_op = 100, std::size_t objective_seeds = 2);

/// Federated (2 clients, sum aggregation, full participation) against
/// centralized training over `rounds` rounds with sgd and adam, per-tensor
/// relative error <= 1e-6 every round, on the in-process and TCP transports.
SuiteReport verify_equivalence(std::size_t rounds = 50);

/// Random round-trips, every single-bit flip of the fixture, golden bytes.
SuiteReport verify_codec(std::size_t cases = 1000);

SuiteReport run_suite(Suite s);

}  // namespace fedcyc
