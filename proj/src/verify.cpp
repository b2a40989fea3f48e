#include "fedcyc/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fedcyc/fed.hpp"
#include "fedcyc/objectives.hpp"

namespace fedcyc {

namespace {

using OpCase = OpGradientCase;

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

BasicTensor<double> uniform(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = d(rng);
  return {std::move(shape), std::move(v)};
}

// Magnitudes in [0.05, 1] with random sign: keeps kinked ops away from 0.
BasicTensor<double> off_zero(Rng& rng, Shape shape) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign;
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return {std::move(shape), std::move(v)};
}

BasicNamedTensor<double> named(std::string n, BasicTensor<double> v) {
  return {std::move(n), std::move(v)};
}

// Squared distance of an op output to a fixed random target.
ScalarGraph against_target(BasicTensor<double> target,
                           std::function<Var(Tape<double>&, std::span<const Var>)> op) {
  return [target, op](Tape<double>& t, std::span<const Var> p) {
    Var y = op(t, p);
    return ops::square_mean(t, ops::sub(t, y, t.constant(target)));
  };
}

Shape image_shape(Rng& rng, std::size_t min_hw = 1) {
  return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, min_hw, 5), pick(rng, min_hw, 5)};
}

OpCase make_case(OpKind kind, Rng& rng) {
  OpCase c;
  switch (kind) {
    case OpKind::dense: {
      const std::size_t n = pick(rng, 1, 3), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
      c.params = {named("x", uniform(rng, {n, in})), named("w", uniform(rng, {out, in})),
                  named("b", uniform(rng, {out}))};
      c.graph = against_target(uniform(rng, {n, out}), [](Tape<double>& t, std::span<const Var> p) {
        return ops::dense(t, p[0], p[1], p[2]);
      });
      break;
    }
    case OpKind::conv2d: {
      const Shape xs = image_shape(rng);
      const std::size_t o = pick(rng, 1, 3), stride = pick(rng, 1, 2);
      const bool bias = pick(rng, 0, 1);
      c.params = {named("x", uniform(rng, xs)), named("w", uniform(rng, {o, xs[1], 3, 3}))};
      if (bias) c.params.push_back(named("b", uniform(rng, {o})));
      const Shape ys{xs[0], o, (xs[2] + stride - 1) / stride, (xs[3] + stride - 1) / stride};
      c.graph = against_target(uniform(rng, ys), [stride, bias](Tape<double>& t,
                                                                std::span<const Var> p) {
        return bias ? ops::conv2d(t, p[0], p[1], p[2], stride) : ops::conv2d(t, p[0], p[1], stride);
      });
      break;
    }
    case OpKind::leaky_relu: {
      const Shape s{pick(rng, 1, 12)};
      c.params = {named("x", off_zero(rng, s))};
      c.graph = against_target(uniform(rng, s), [](Tape<double>& t, std::span<const Var> p) {
        return ops::leaky_relu(t, p[0]);
      });
      break;
    }
    case OpKind::instance_norm: {
      const Shape s = image_shape(rng, 2);
      c.params = {named("x", uniform(rng, s))};
      c.graph = against_target(uniform(rng, s), [](Tape<double>& t, std::span<const Var> p) {
        return ops::instance_norm(t, p[0]);
      });
      break;
    }
    case OpKind::adain: {
      const Shape s = image_shape(rng, 2);
      c.params = {named("x", uniform(rng, s)), named("gamma", uniform(rng, {s[1]}, 0.5, 1.5)),
                  named("beta", uniform(rng, {s[1]}))};
      c.graph = against_target(uniform(rng, s), [](Tape<double>& t, std::span<const Var> p) {
        return ops::adain(t, p[0], p[1], p[2]);
      });
      break;
    }
    case OpKind::upsample_nearest: {
      const Shape s = image_shape(rng);
      c.params = {named("x", uniform(rng, s))};
      c.graph = against_target(uniform(rng, {s[0], s[1], 2 * s[2], 2 * s[3]}),
                               [](Tape<double>& t, std::span<const Var> p) {
                                 return ops::upsample_nearest(t, p[0]);
                               });
      break;
    }
    case OpKind::add:
    case OpKind::sub: {
      const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
      c.params = {named("a", uniform(rng, s)), named("b", uniform(rng, s))};
      c.graph = against_target(uniform(rng, s), [kind](Tape<double>& t, std::span<const Var> p) {
        return kind == OpKind::add ? ops::add(t, p[0], p[1]) : ops::sub(t, p[0], p[1]);
      });
      break;
    }
    case OpKind::scalar_mul: {
      const Shape s{pick(rng, 1, 8)};
      const double k = std::uniform_real_distribution<double>(-3, 3)(rng);
      c.params = {named("x", uniform(rng, s))};
      c.graph = against_target(uniform(rng, s), [k](Tape<double>& t, std::span<const Var> p) {
        return ops::scalar_mul(t, p[0], k);
      });
      break;
    }
    case OpKind::mean:
    case OpKind::abs_mean:
    case OpKind::square_mean: {
      const Shape s{pick(rng, 1, 3), pick(rng, 1, 6)};
      c.params = {named("x", off_zero(rng, s))};
      c.graph = [kind](Tape<double>& t, std::span<const Var> p) {
        Var r = kind == OpKind::mean       ? ops::mean(t, p[0])
                : kind == OpKind::abs_mean ? ops::abs_mean(t, p[0])
                                           : ops::square_mean(t, p[0]);
        // squared so the linear mean still has a non-constant gradient
        return ops::square_mean(t, r);
      };
      break;
    }
    case OpKind::sigmoid:
    case OpKind::softplus:
    case OpKind::tanh: {
      const Shape s{pick(rng, 1, 10)};
      c.params = {named("x", uniform(rng, s, -4.0, 4.0))};
      c.graph = against_target(uniform(rng, s), [kind](Tape<double>& t, std::span<const Var> p) {
        return kind == OpKind::sigmoid    ? ops::sigmoid(t, p[0])
               : kind == OpKind::softplus ? ops::softplus(t, p[0])
                                          : ops::tanh(t, p[0]);
      });
      break;
    }
    case OpKind::slice: {
      const std::size_t n = pick(rng, 2, 10), off = pick(rng, 0, n - 1), len = pick(rng, 1, n - off);
      c.params = {named("x", uniform(rng, {n}))};
      c.graph = against_target(uniform(rng, {len}), [off, len](Tape<double>& t,
                                                               std::span<const Var> p) {
        return ops::slice(t, p[0], off, len);
      });
      break;
    }
    default:
      throw std::invalid_argument("no gradient case for " + std::string(op_name(kind)));
  }
  return c;
}

}  // namespace
OpGradientCase op_gradient_case(OpKind kind, std::uint64_t seed) {
  Rng rng(seed);
  return make_case(kind, rng);
}

GradientMessage random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> groups(0, 3), entries(0, 4), rank(1, 4), extent(1, 5),
      name_len(0, 12), byte(0, 255);
  std::normal_distribution<float> value(0.0f, 10.0f);
  GradientMessage m;
  m.round = static_cast<std::uint32_t>(rng());
  m.client = static_cast<std::uint32_t>(rng());
  m.domain = static_cast<Domain>(rng() % 2);
  m.step = static_cast<StepKind>(rng() % 3);
  const int ng = groups(rng);
  for (int g = 0; g < ng; ++g) {
    ParamGroup group(static_cast<Role>(rng() % 8));
    const int ne = entries(rng);
    for (int e = 0; e < ne; ++e) {
      // arbitrary bytes, made unique by a suffix
      std::string name;
      for (int i = name_len(rng); i > 0; --i) name.push_back(static_cast<char>(byte(rng)));
      name += "#" + std::to_string(e);
      Shape shape;
      for (int r = rank(rng); r > 0; --r) shape.push_back(static_cast<std::size_t>(extent(rng)));
      std::vector<float> v(element_count(shape));
      for (auto& x : v) x = value(rng);
      if (rng() % 4 == 0) v[0] = -0.0f;
      group.add(std::move(name), Tensor(std::move(shape), std::move(v)));
    }
    m.groups.push_back(std::move(group));
  }
  return m;
}

GradientMessage fixture_message() {
  GradientMessage m;
  m.round = 7;
  m.client = 3;
  m.domain = Domain::Y;
  m.step = StepKind::d_step;
  ParamGroup g(Role::DY);
  g.add("w", Tensor({2}, {1.0f, -1.0f}));
  m.groups.push_back(std::move(g));
  return m;
}

bool SuiteReport::passed() const {
  for (const auto& c : checks)
    if (!c.informational && !c.passed) return false;
  return !checks.empty();
}

std::string SuiteReport::to_json() const {
  nlohmann::json j;
  j["suite"] = suite;
  j["passed"] = passed();
  for (const auto& c : checks) {
    j["checks"].push_back({{"name", c.name},
                           {"passed", c.passed},
                           {"informational", c.informational},
                           {"worst", c.worst},
                           {"tolerance", c.tolerance},
                           {"cases", c.cases},
                           {"seconds", c.seconds},
                           {"detail", c.detail}});
  }
  return j.dump(2);
}

std::string_view suite_name(Suite s) {
  switch (s) {
    case Suite::decomposition: return "decomposition";
    case Suite::gradcheck: return "gradcheck";
    case Suite::equivalence: return "equivalence";
    case Suite::codec: return "codec";
  }
  return "?";
}

std::optional<Suite> parse_suite(std::string_view text) {
  for (Suite s : {Suite::decomposition, Suite::gradcheck, Suite::equivalence, Suite::codec})
    if (suite_name(s) == text) return s;
  return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Tracks the worst case of one check and the first failure's description.
struct Worst {
  CheckResult r;

  Worst(std::string name, double tolerance) {
    r.name = std::move(name);
    r.tolerance = tolerance;
    r.passed = true;
  }
  void observe(double err, const std::function<std::string()>& where) {
    ++r.cases;
    if (!(err <= r.worst)) r.worst = std::isnan(err) ? INFINITY : std::max(r.worst, err);
    if (!(err <= r.tolerance) && r.passed) {
      r.passed = false;
      r.detail = where() + ": " + std::to_string(err);
    }
  }
};

std::vector<Tensor> random_images(std::mt19937_64& rng, std::size_t n, std::size_t hw) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(hw * hw);
    for (auto& x : v) x = u(rng);
    out.emplace_back(Shape{1, hw, hw}, std::move(v));
  }
  return out;
}

}  // namespace

SuiteReport verify_decomposition(std::size_t seeds) {
  SuiteReport rep{"decomposition", {}};
  Worst values("value identity", 1e-6), grads("gradient-sum identity", 1e-5);
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(seed * 104729 + 1);
    std::uniform_int_distribution<std::size_t> width(2, 8), depth(1, 2), batch(1, 3);
    std::uniform_real_distribution<double> lam(0.0, 20.0), lam_id(0.0, 10.0);
    ModelConfig g, d;
    g.base_width = width(rng);
    g.depth = depth(rng);
    g.residual_skip = rng() % 2;
    d.base_width = width(rng);
    d.depth = depth(rng);
    const Variant variant = seed % 2 ? Variant::switchable : Variant::standard;
    LossWeights w;
    w.gan_mode = (seed / 2) % 2 ? GanMode::vanilla : GanMode::least_squares;
    w.lambda_cycle = lam(rng);
    w.lambda_identity = lam_id(rng);
    const std::size_t hw = rng() % 2 ? 8 : 16;
    auto models = build_cycle_models(variant, g, d, rng());
    const Tensor bx = make_batch(random_images(rng, batch(rng), hw));
    const Tensor by = make_batch(random_images(rng, batch(rng), hw));

    auto lx = local_objective_gradient<float>(models, bx, Domain::X, w);
    auto ly = local_objective_gradient<float>(models, by, Domain::Y, w);
    auto c = central_objective_gradient<float>(models, bx, by, w);
    auto where = [&] {
      std::ostringstream s;
      s << "seed " << seed << " (" << variant_name(variant) << ", " << gan_mode_name(w.gan_mode) << ")";
      return s.str();
    };
    values.observe(std::abs(c.value - (lx.value + ly.value)) / std::max(std::abs(c.value), 1.0), where);
    for (std::size_t i = 0; i < c.gradient.size(); ++i) {
      const auto& a = lx.gradient[i].value;
      const auto& b = ly.gradient[i].value;
      std::vector<float> sum(a.size());
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = a[k] + b[k];
      grads.observe(relative_error(Tensor(a.shape(), std::move(sum)), c.gradient[i].value),
                    [&] { return where() + " " + c.gradient[i].name; });
    }
  }
  values.r.cases = seeds;
  values.r.seconds = grads.r.seconds = since(t0);
  rep.checks = {values.r, grads.r};
  return rep;
}

SuiteReport verify_gradcheck(std::size_t cases_per_op, std::size_t objective_seeds) {
  SuiteReport rep{"gradcheck", {}};
  for (OpKind kind : differentiable_ops()) {
    Worst w(std::string("op ") + std::string(op_name(kind)), 1e-4);
    const auto t0 = Clock::now();
    for (std::uint64_t seed = 0; seed < cases_per_op; ++seed) {
      auto c = op_gradient_case(kind, seed * 7919 + static_cast<std::uint64_t>(kind));
      auto r = finite_diff_check(c.graph, c.params, oracle_options());
      w.observe(r.max_relative_error, [&] {
        return "seed " + std::to_string(seed) + " at " + r.worst_parameter + "[" +
               std::to_string(r.worst_index) + "]";
      });
    }
    w.r.seconds = since(t0);
    rep.checks.push_back(w.r);
  }

  ModelConfig cfg;
  cfg.base_width = 2;
  cfg.depth = 1;
  for (Domain d : {Domain::X, Domain::Y}) {
    Worst w(std::string("local objective ") + std::string(domain_name(d)), 1e-4);
    const auto t0 = Clock::now();
    for (GanMode mode : {GanMode::least_squares, GanMode::vanilla})
      for (Variant v : {Variant::standard, Variant::switchable})
        for (std::uint64_t seed = 0; seed < objective_seeds; ++seed) {
          auto m = build_cycle_models(v, cfg, cfg, 8 + seed);
          auto params = flatten_to_double(m.groups);
          // away from the 0.02-scale init, where gradients sit below the oracle's floor
          std::mt19937_64 rng(8 + seed);
          std::normal_distribution<double> jitter(0.0, 0.3);
          for (auto& p : params)
            for (auto& e : p.value.data()) e += jitter(rng);
          const auto batch = make_batch(random_images(rng, 2, 8)).cast<double>();
          LossWeights lw;
          lw.gan_mode = mode;
          ScalarGraph f = [&](Tape<double>& t, std::span<const Var> handles) {
            CycleNetworks<double> nets(t, m, bind_handles<double>(m.groups, handles));
            return build_local_graph<double>(t, nets, nullptr, t.constant(batch), d, lw).objective;
          };
          auto r = finite_diff_check(f, params, oracle_options());
          w.observe(r.max_relative_error, [&] {
            return std::string(gan_mode_name(mode)) + " " + std::string(variant_name(v)) + " seed " +
                   std::to_string(seed) + " at " + r.worst_parameter + "[" +
                   std::to_string(r.worst_index) + "]";
          });
        }
    w.r.seconds = since(t0);
    rep.checks.push_back(w.r);
  }
  return rep;
}

namespace {

double trajectory_error(const TrainResult& a, const TrainResult& b, std::size_t& worst_round) {
  double worst = 0;
  for (std::size_t k = 0; k < a.trajectory.size(); ++k)
    for (std::size_t g = 0; g < a.trajectory[k].size(); ++g)
      for (std::size_t e = 0; e < a.trajectory[k][g].size(); ++e) {
        const double err = relative_error(a.trajectory[k][g].entries()[e].value,
                                          b.trajectory[k][g].entries()[e].value);
        if (err > worst) {
          worst = err;
          worst_round = k;
        }
      }
  return worst;
}

bool same_trajectory(const TrainResult& a, const TrainResult& b) {
  if (a.trajectory.size() != b.trajectory.size()) return false;
  for (std::size_t k = 0; k < a.trajectory.size(); ++k)
    for (std::size_t g = 0; g < a.trajectory[k].size(); ++g)
      if (!bitwise_equal(a.trajectory[k][g], b.trajectory[k][g])) return false;
  return true;
}

}  // namespace

SuiteReport verify_equivalence(std::size_t rounds) {
  SuiteReport rep{"equivalence", {}};
  auto task = make_denoise_task(64, 1, 0.1, 5);
  auto clients = make_clients(task, 1, 4, 5);

  for (Variant variant : {Variant::standard, Variant::switchable})
    for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
      TrainConfig cfg;
      cfg.variant = variant;
      cfg.generator.residual_skip = true;
      cfg.rounds = rounds;
      cfg.aggregation = Aggregation::sum;
      cfg.optimizer.kind = kind;
      cfg.lr = kind == OptimizerKind::sgd ? 0.01 : 1e-3;
      const std::string tag = std::string(variant_name(variant)) + " " + std::string(optimizer_name(kind));
      auto central = train_centralized(cfg, clients[0], clients[1], {true});

      for (TransportKind transport : {TransportKind::in_process, TransportKind::tcp}) {
        if (variant == Variant::switchable && transport == TransportKind::tcp) continue;
        const auto t1 = Clock::now();
        cfg.transport = transport;
        auto fed = train_federated(cfg, clients, {true});
        CheckResult c;
        c.name = tag + " over " + std::string(transport_name(transport));
        c.tolerance = 1e-6;
        c.cases = rounds;
        std::size_t at = 0;
        c.worst = trajectory_error(fed, central, at);
        c.passed = c.worst <= c.tolerance;
        // roundoff-order divergence of the shared backbone; see the README
        c.informational = variant == Variant::switchable;
        c.detail = "worst at round " + std::to_string(at);
        c.seconds = since(t1);
        rep.checks.push_back(c);
        if (transport == TransportKind::tcp) {
          cfg.transport = TransportKind::in_process;
          auto mem = train_federated(cfg, clients, {true});
          CheckResult same;
          same.name = tag + " tcp trajectory equals in-process";
          same.cases = rounds;
          same.passed = same_trajectory(fed, mem);
          same.detail = same.passed ? "bitwise identical" : "trajectories differ";
          rep.checks.push_back(same);
        }
      }
    }
  return rep;
}

SuiteReport verify_codec(std::size_t cases) {
  SuiteReport rep{"codec", {}};
  {
    CheckResult c;
    c.name = "random round-trips bit-exact";
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    c.passed = true;
    for (std::size_t i = 0; i < cases; ++i) {
      const auto m = random_message(rng);
      const auto bytes = encode(m);
      ++c.cases;
      if (bytes.size() != message_size(m.groups) || !bitwise_equal(decode(bytes), m)) {
        c.passed = false;
        c.detail = "case " + std::to_string(i);
        break;
      }
    }
    c.seconds = since(t0);
    rep.checks.push_back(c);
  }
  {
    CheckResult c;
    c.name = "single-bit flips detected";
    const auto t0 = Clock::now();
    const auto bytes = encode(fixture_message());
    c.passed = true;
    for (std::size_t bit = 0; bit < 8 * bytes.size(); ++bit) {
      auto corrupt = bytes;
      corrupt[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      ++c.cases;
      bool detected = false;
      try {
        decode(corrupt);
      } catch (const CodecError& e) {
        detected = e.kind() == CodecErrorKind::bad_crc;
      }
      if (!detected) {
        c.passed = false;
        c.detail = "bit " + std::to_string(bit) + " undetected";
        break;
      }
    }
    c.seconds = since(t0);
    rep.checks.push_back(c);
  }
  {
    CheckResult c;
    c.name = "golden payload bytes";
    const auto bytes = encode(fixture_message());
    const std::uint8_t golden[8] = {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x80, 0xBF};
    c.cases = 1;
    c.passed = bytes.size() == 43 && std::equal(golden, golden + 8, bytes.begin() + 31);
    rep.checks.push_back(c);
  }
  return rep;
}

SuiteReport run_suite(Suite s) {
  switch (s) {
    case Suite::decomposition: return verify_decomposition();
    case Suite::gradcheck: return verify_gradcheck();
    case Suite::equivalence: return verify_equivalence();
    case Suite::codec: return verify_codec();
  }
  throw std::invalid_argument("unknown suite");
}

}  // namespace fedcyc
