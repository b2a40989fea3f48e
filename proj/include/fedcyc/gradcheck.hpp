#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "fedcyc/tape.hpp"

namespace fedcyc {

/// Builds a scalar loss on a 64-bit tape from parameter handles given in
/// the same order as the checked parameter list. Must be deterministic.
using ScalarGraph = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-3;
  /// Denominator floor in |a - n| / max(|a|, |n|, floor).
  double floor = 1e-8;
  /// 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coordinates = 0;
  std::uint64_t coordinate_seed = 0;
  std::optional<FaultInjection> fault;
  /// When > 0, each coordinate is also differenced at step/10, step/100, ...
  /// (this many extra levels) and the estimate from the level that best
  /// agrees with the next smaller one is kept. A single step straddling a
  /// kink (leaky_relu, abs) produces an outlier that the next level does
  /// not reproduce. Levels stop early once two agree within `agreement`.
  int max_refinements = 0;
  double agreement = 1e-7;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t coordinates_refined = 0;
};

class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compares backward() against central differences (f(p+h) - f(p-h)) / 2h,
/// evaluated entirely in double precision.
GradCheckReport finite_diff_check(const ScalarGraph& f,
                                  std::span<const BasicNamedTensor<double>> params,
                                  const GradCheckOptions& options = {});

}  // namespace fedcyc
