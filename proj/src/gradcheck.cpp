#include "fedcyc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace fedcyc {

namespace {

double evaluate(const ScalarGraph& f, std::span<const BasicNamedTensor<double>> params) {
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p.value));
  Var out = f(tape, vars);
  const auto& v = tape.value(out);
  if (v.size() != 1) throw TapeError("finite_diff_check: function is not scalar");
  return v[0];
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarGraph& f,
                                  std::span<const BasicNamedTensor<double>> params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be > 0");

  const double base_a = evaluate(f, params);
  const double base_b = evaluate(f, params);
  if (std::memcmp(&base_a, &base_b, sizeof(double)) != 0) {
    throw NonDeterministicError("finite_diff_check: function returned different values for "
                                "identical parameters");
  }

  Tape<double> tape;
  if (options.fault) tape.inject_fault(*options.fault);
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p.name, p.value));
  Var loss = f(tape, vars);
  auto analytic = tape.backward(loss);

  // (param index, element index) pairs to probe
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].value.size(); ++j) coords.emplace_back(i, j);
  if (options.max_coordinates && coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.coordinate_seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  std::vector<BasicNamedTensor<double>> probe(params.begin(), params.end());
  GradCheckReport report;
  for (auto [i, j] : coords) {
    const double original = probe[i].value[j];
    auto at = [&](double x) {
      probe[i].value[j] = x;
      const double v = evaluate(f, probe);
      probe[i].value[j] = original;
      return v;
    };

    auto central = [&](double step) {
      return (at(original + step) - at(original - step)) / (2.0 * step);
    };
    double step = options.step;
    double numeric = central(step);
    if (options.max_refinements > 0) {
      const double first = numeric;
      double previous = numeric, best_gap = std::numeric_limits<double>::infinity();
      for (int level = 0; level < options.max_refinements; ++level) {
        step /= 10.0;
        const double next = central(step);
        const double gap = std::abs(next - previous) /
                           std::max({std::abs(next), std::abs(previous), options.floor});
        if (gap < best_gap) {
          best_gap = gap;
          numeric = previous;
        }
        if (gap <= options.agreement) break;
        previous = next;
      }
      if (numeric != first) ++report.coordinates_refined;
    }

    const double a = analytic[i].value[j];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    const double err = std::abs(a - numeric) / denom;
    ++report.coordinates_checked;
    if (err > report.max_relative_error || report.coordinates_checked == 1) {
      report.max_relative_error = err;
      report.worst_parameter = params[i].name;
      report.worst_index = j;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace fedcyc
