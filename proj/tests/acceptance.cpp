// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fedcyc/experiment.hpp"
#include "fedcyc/verify.hpp"

using namespace fedcyc;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

const CheckResult* find_check(const SuiteReport& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return &c;
  return nullptr;
}

std::string num(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// Shared between criteria 2 and 8.
SuiteReport& equivalence_report() {
  static SuiteReport r = verify_equivalence(50);
  return r;
}
double equivalence_seconds = 0;

Outcome decomposition() {
  const auto t0 = Clock::now();
  const auto r = verify_decomposition(100);
  const double secs = since(t0);
  const auto& v = *find_check(r, "value identity");
  const auto& g = *find_check(r, "gradient-sum identity");
  return {r.passed() && secs < 30,
          "value " + num(v.worst) + " <= 1e-6, gradient " + num(g.worst) + " <= 1e-5 over 100 seeds, " +
              num(secs) + " s (< 30 s)"};
}

Outcome equivalence() {
  const auto t0 = Clock::now();
  const auto& r = equivalence_report();
  equivalence_seconds = since(t0);
  bool ok = true;
  std::string detail;
  for (const char* name : {"standard sgd over in-process", "standard adam over in-process"}) {
    const auto* c = find_check(r, name);
    ok = ok && c && c->passed;
    detail += std::string(name) + " worst " + num(c ? c->worst : INFINITY) + "; ";
  }
  // the switchable variant is a diagnostic, see the README
  for (const char* name : {"switchable sgd over in-process", "switchable adam over in-process"}) {
    if (const auto* c = find_check(r, name)) detail += "[info] " + std::string(name) + " " + num(c->worst) + "; ";
  }
  // the suite also times the TCP runs and diagnostics, so this bounds it from above
  ok = ok && equivalence_seconds < 120;
  return {ok, detail + num(equivalence_seconds) + " s (< 120 s)"};
}

Outcome gradcheck() {
  const auto t0 = Clock::now();
  const auto r = verify_gradcheck(100);
  const double secs = since(t0);
  double worst = 0;
  std::string failed;
  for (const auto& c : r.checks) {
    worst = std::max(worst, c.worst);
    if (!c.passed) failed += " " + c.name + " (" + c.detail + ")";
  }
  return {r.passed() && secs < 120,
          std::to_string(r.checks.size()) + " checks, worst " + num(worst) + " <= 1e-4, " + num(secs) +
              " s (< 120 s)" + (failed.empty() ? "" : "; failed:" + failed)};
}

double eval_psnr(const ExperimentConfig& c, TrainResult* out = nullptr) {
  const auto task = build_task(c);
  auto r = run_experiment(c, task);
  const double p = evaluate(task, r.models).output_psnr;
  if (out) *out = std::move(r);
  return p;
}

struct ToyRuns {
  double seconds = 0;
  double input_psnr = 0;
  double federated_psnr = 0;
  double centralized_psnr = 0;
  double d_loss = 0;
};

ToyRuns& toy_runs() {
  static ToyRuns t = [] {
    ToyRuns r;
    ExperimentConfig c;  // toy denoise defaults, 400 rounds
    const auto task = build_task(c);
    const auto t0 = Clock::now();
    TrainResult fed;
    r.federated_psnr = eval_psnr(c, &fed);
    r.seconds = since(t0);
    r.input_psnr = evaluate(task, fed.models).input_psnr;
    const auto& rounds = fed.history.rounds;
    for (std::size_t k = rounds.size() - 50; k < rounds.size(); ++k) r.d_loss += rounds[k].d_step_loss;
    r.d_loss /= 50;
    c.mode = RunMode::centralized;
    r.centralized_psnr = eval_psnr(c);
    return r;
  }();
  return t;
}

Outcome lsgan_fixed_point() {
  const auto& t = toy_runs();
  return {t.d_loss >= 0.15 && t.d_loss <= 0.35 && t.seconds < 300,
          "mean D-step loss over rounds 350..399 = " + num(t.d_loss) + " (in [0.15, 0.35]), 400 rounds in " +
              num(t.seconds) + " s (< 300 s)"};
}

Outcome denoising() {
  const auto& t = toy_runs();
  const double gain = t.federated_psnr - t.input_psnr;
  const double gap = std::abs(t.federated_psnr - t.centralized_psnr);
  return {gain >= 2.0 && gap <= 0.5,
          "input " + num(t.input_psnr, 4) + " dB, federated " + num(t.federated_psnr, 4) + " dB (+" + num(gain) +
              " >= 2), centralized " + num(t.centralized_psnr, 4) + " dB (gap " + num(gap) + " <= 0.5)"};
}

Outcome bandwidth() {
  ExperimentConfig c;
  const auto standard = build_cycle_models(Variant::standard, c.generator, c.discriminator, c.seed);
  const auto switchable = build_cycle_models(Variant::switchable, c.generator, c.discriminator, c.seed);
  const auto ps = param_count(standard.groups).total, pw = param_count(switchable.groups).total;
  const auto bs = encode_params(standard, 0).size(), bw = encode_params(switchable, 0).size();
  return {pw < ps && bw < bs,
          "params " + std::to_string(pw) + " < " + std::to_string(ps) + ", message bytes " + std::to_string(bw) +
              " < " + std::to_string(bs) + " (ratio " + num(static_cast<double>(pw) / ps) +
              "; full-size reference 35,576,708 / 69,522,952 = 0.512)"};
}

Outcome multi_client() {
  const auto t0 = Clock::now();
  double n4 = 0, n1 = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.clients_per_domain = 2;
    c.selected = 4;
    const double a = eval_psnr(c);
    c.selected = 1;
    const double b = eval_psnr(c);
    n4 += a / 3;
    n1 += b / 3;
    per_seed += " " + num(a, 4) + "/" + num(b, 4);
  }
  const double secs = since(t0);
  return {n4 >= n1 - 0.3 && secs < 1200,
          "mean PSNR N=4 " + num(n4, 4) + " dB vs N=1 " + num(n1, 4) + " dB (need N=4 >= N=1 - 0.3); per seed" +
              per_seed + "; " + num(secs) + " s (< 1200 s)"};
}

Outcome wire_integrity() {
  const auto codec = verify_codec(1000);
  const auto& eq = equivalence_report();
  bool tcp_ok = true;
  std::string detail;
  for (const char* opt : {"sgd", "adam"}) {
    const std::string tag = std::string("standard ") + opt;
    const auto* over_tcp = find_check(eq, tag + " over tcp");
    const auto* same = find_check(eq, tag + " tcp trajectory equals in-process");
    tcp_ok = tcp_ok && over_tcp && over_tcp->passed && same && same->passed;
    detail += "; " + tag + " tcp: " + (same && same->passed ? "bitwise equal to in-process" : "differs");
  }
  const auto* rt = find_check(codec, "random round-trips bit-exact");
  const auto* flips = find_check(codec, "single-bit flips detected");
  return {codec.passed() && tcp_ok,
          std::to_string(rt->cases) + " round-trips " + (rt->passed ? "bit-exact" : "FAILED") + ", " +
              std::to_string(flips->cases) + " bit flips " + (flips->passed ? "all detected" : "MISSED") + detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "decomposition identity", decomposition},
      {2, "federated matches centralized", equivalence},
      {3, "gradient correctness", gradcheck},
      {4, "LSGAN fixed point", lsgan_fixed_point},
      {5, "denoising improvement", denoising},
      {6, "switchable bandwidth reduction", bandwidth},
      {7, "multi-client trend", multi_client},
      {8, "wire integrity", wire_integrity},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.passed;
    std::printf("%s %d %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
