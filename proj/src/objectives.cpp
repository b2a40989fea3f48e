#include "fedcyc/objectives.hpp"

namespace fedcyc {

std::string_view gan_mode_name(GanMode mode) {
  return mode == GanMode::least_squares ? "least-squares" : "vanilla-log";
}

std::optional<GanMode> parse_gan_mode(std::string_view text) {
  if (text == "least-squares" || text == "lsgan" || text == "ls") return GanMode::least_squares;
  if (text == "vanilla-log" || text == "vanilla") return GanMode::vanilla;
  return std::nullopt;
}

std::string_view domain_name(Domain d) { return d == Domain::X ? "X" : "Y"; }

void LossWeights::validate() const {
  if (!(lambda_cycle >= 0.0)) throw ObjectiveError("lambda_cycle must be >= 0");
  if (!(lambda_identity >= 0.0)) throw ObjectiveError("lambda_identity must be >= 0");
}

template <typename T>
Var adversarial_term(Tape<T>& t, Var scores, Target target, GanMode mode) {
  if (mode == GanMode::least_squares) {
    if (target == Target::fake) return ops::square_mean(t, scores);
    const auto& s = t.value(scores).shape();
    Var ones = t.constant(BasicTensor<T>::full(s, T(1)));
    return ops::square_mean(t, ops::sub(t, scores, ones));
  }
  // -log sigmoid(s) = softplus(-s); -log(1 - sigmoid(s)) = softplus(s)
  Var arg = target == Target::real ? ops::scalar_mul(t, scores, -1.0) : scores;
  return ops::mean(t, ops::softplus(t, arg));
}

template <typename T>
Var cycle_term(Tape<T>& t, Var recon, Var original) {
  return ops::abs_mean(t, ops::sub(t, recon, original));
}

Tensor make_batch(std::span<const Tensor> samples) {
  if (samples.empty()) throw ObjectiveError("empty batch");
  return stack(samples);
}

namespace {

// The four directional roles seen from one domain.
template <typename T>
struct DomainView {
  CycleNetworks<T>& nets;
  Domain d;

  Var own_score(Var v) { return d == Domain::X ? nets.score_x(v) : nets.score_y(v); }
  Var other_score(Var v) { return d == Domain::X ? nets.score_y(v) : nets.score_x(v); }
  Var translate(Var v) { return d == Domain::X ? nets.to_y(v) : nets.to_x(v); }
  Var back(Var v) { return d == Domain::X ? nets.to_x(v) : nets.to_y(v); }
};

template <typename T>
Var detach(Tape<T>& t, Var v) {
  return t.constant(t.value(v));
}

template <typename T>
Var sum(Tape<T>& t, std::initializer_list<Var> vars) {
  Var acc = *vars.begin();
  for (auto it = vars.begin() + 1; it != vars.end(); ++it) acc = ops::add(t, acc, *it);
  return acc;
}

}  // namespace

template <typename T>
LocalGraph build_local_graph(Tape<T>& t, CycleNetworks<T>& nets, CycleNetworks<T>* frozen,
                             Var batch, Domain d, const LossWeights& w) {
  w.validate();
  DomainView<T> view{nets, d};
  LocalGraph g;
  Var fake = view.translate(batch);
  g.cycle = ops::scalar_mul(t, cycle_term(t, view.back(fake), batch), w.lambda_cycle);
  // identity: the generator into this domain should leave its samples alone
  g.identity = ops::scalar_mul(t, identity_term(t, view.back(batch), batch), w.lambda_identity);
  g.adversarial_real = adversarial_term(t, view.own_score(batch), Target::real, w.gan_mode);

  if (!frozen) {
    g.adversarial_fake = adversarial_term(t, view.other_score(fake), Target::fake, w.gan_mode);
    g.objective = sum(t, {g.adversarial_real, g.adversarial_fake, g.cycle, g.identity});
    return g;
  }

  g.adversarial_fake =
      adversarial_term(t, view.other_score(detach(t, fake)), Target::fake, w.gan_mode);
  g.objective = sum(t, {g.adversarial_real, g.adversarial_fake, g.cycle, g.identity});
  g.d_step = ops::scalar_mul(t, ops::add(t, g.adversarial_real, g.adversarial_fake), 0.5);
  DomainView<T> fixed{*frozen, d};
  Var fool = adversarial_term(t, fixed.other_score(fake), Target::real, w.gan_mode);
  g.g_step = sum(t, {fool, g.cycle, g.identity});
  return g;
}

template <typename T>
CentralGraph build_central_graph(Tape<T>& t, CycleNetworks<T>& nets, CycleNetworks<T>* frozen,
                                 Var x, Var y, const LossWeights& w) {
  w.validate();
  CentralGraph g;
  Var fake_y = nets.to_y(x);  // F(x)
  Var fake_x = nets.to_x(y);  // G(y)
  const GanMode mode = w.gan_mode;

  Var cyc = ops::add(t, cycle_term(t, nets.to_x(fake_y), x), cycle_term(t, nets.to_y(fake_x), y));
  Var idt = ops::add(t, identity_term(t, nets.to_x(x), x), identity_term(t, nets.to_y(y), y));
  g.cycle = ops::scalar_mul(t, cyc, w.lambda_cycle);
  g.identity = ops::scalar_mul(t, idt, w.lambda_identity);

  Var fx = frozen ? detach(t, fake_x) : fake_x;
  Var fy = frozen ? detach(t, fake_y) : fake_y;
  g.gan_to_x = ops::add(t, adversarial_term(t, nets.score_x(x), Target::real, mode),
                        adversarial_term(t, nets.score_x(fx), Target::fake, mode));
  g.gan_to_y = ops::add(t, adversarial_term(t, nets.score_y(y), Target::real, mode),
                        adversarial_term(t, nets.score_y(fy), Target::fake, mode));
  g.objective = sum(t, {g.gan_to_x, g.gan_to_y, g.cycle, g.identity});
  if (!frozen) return g;

  g.d_step = ops::scalar_mul(t, ops::add(t, g.gan_to_x, g.gan_to_y), 0.5);
  Var fool = ops::add(t, adversarial_term(t, frozen->score_x(fake_x), Target::real, mode),
                      adversarial_term(t, frozen->score_y(fake_y), Target::real, mode));
  g.g_step = sum(t, {fool, g.cycle, g.identity});
  return g;
}

const ParamGroup& StepGradients::group(Role role) const {
  for (const auto& g : groups)
    if (g.role() == role) return g;
  throw ObjectiveError("no gradient group " + std::string(role_name(role)));
}

namespace {

auto all_trainable = [](Role) { return true; };
auto none_trainable = [](Role) { return false; };

// d_step + g_step has the D-step gradient on discriminator roles and the
// G-step gradient on generator roles, since each half only reaches its
// own roles' parameters.
StepGradients step_gradients(const CycleModels& models, Tape<float>& t, Var d_step, Var g_step) {
  auto grads = t.backward(ops::add(t, d_step, g_step));
  return {gradients_to_groups<float>(models.groups, grads)};
}

}  // namespace

LocalResult local_objective(const CycleModels& models, std::span<const Tensor> batch, Domain d,
                            const LossWeights& w) {
  const Tensor input = make_batch(batch);
  Tape<float> t;
  CycleNetworks<float> nets(t, models, all_trainable);
  CycleNetworks<float> frozen(t, models, none_trainable);
  Var b = t.constant(input);
  LocalGraph g = build_local_graph(t, nets, &frozen, b, d, w);

  LocalResult r;
  r.report.domain = d;
  r.report.terms = {t.value(g.adversarial_real).item(), t.value(g.adversarial_fake).item(),
                    t.value(g.cycle).item(), t.value(g.identity).item()};
  r.report.loss = t.value(g.objective).item();
  r.report.d_step_loss = t.value(g.d_step).item();
  r.report.g_step_loss = t.value(g.g_step).item();
  r.gradients = step_gradients(models, t, g.d_step, g.g_step);
  return r;
}

CentralResult centralized_loss(const CycleModels& models, std::span<const Tensor> batch_x,
                               std::span<const Tensor> batch_y, const LossWeights& w) {
  const Tensor bx = make_batch(batch_x), by = make_batch(batch_y);
  Tape<float> t;
  CycleNetworks<float> nets(t, models, all_trainable);
  CycleNetworks<float> frozen(t, models, none_trainable);
  CentralGraph g = build_central_graph(t, nets, &frozen, t.constant(bx), t.constant(by), w);
  CentralResult r;
  r.loss = t.value(g.objective).item();
  r.d_step_loss = t.value(g.d_step).item();
  r.g_step_loss = t.value(g.g_step).item();
  r.gradients = step_gradients(models, t, g.d_step, g.g_step);
  return r;
}

template <typename T>
ObjectiveGradient<T> local_objective_gradient(const CycleModels& models, const Tensor& batch,
                                              Domain d, const LossWeights& w) {
  Tape<T> t;
  CycleNetworks<T> nets(t, models, all_trainable);
  LocalGraph g = build_local_graph<T>(t, nets, nullptr, t.constant(batch.cast<T>()), d, w);
  ObjectiveGradient<T> out;
  out.value = static_cast<double>(t.value(g.objective).item());
  out.gradient = t.backward(g.objective);
  return out;
}

template <typename T>
ObjectiveGradient<T> central_objective_gradient(const CycleModels& models, const Tensor& batch_x,
                                                const Tensor& batch_y, const LossWeights& w) {
  Tape<T> t;
  CycleNetworks<T> nets(t, models, all_trainable);
  CentralGraph g = build_central_graph<T>(t, nets, nullptr, t.constant(batch_x.cast<T>()),
                                          t.constant(batch_y.cast<T>()), w);
  ObjectiveGradient<T> out;
  out.value = static_cast<double>(t.value(g.objective).item());
  out.gradient = t.backward(g.objective);
  return out;
}

#define FEDCYC_INSTANTIATE(T)                                                                  \
  template Var adversarial_term(Tape<T>&, Var, Target, GanMode);                               \
  template Var cycle_term(Tape<T>&, Var, Var);                                                 \
  template LocalGraph build_local_graph(Tape<T>&, CycleNetworks<T>&, CycleNetworks<T>*, Var,   \
                                        Domain, const LossWeights&);                           \
  template CentralGraph build_central_graph(Tape<T>&, CycleNetworks<T>&, CycleNetworks<T>*,    \
                                            Var, Var, const LossWeights&);                     \
  template ObjectiveGradient<T> local_objective_gradient(const CycleModels&, const Tensor&,    \
                                                         Domain, const LossWeights&);          \
  template ObjectiveGradient<T> central_objective_gradient(const CycleModels&, const Tensor&,  \
                                                           const Tensor&, const LossWeights&);

FEDCYC_INSTANTIATE(float)
FEDCYC_INSTANTIATE(double)

#undef FEDCYC_INSTANTIATE

}  // namespace fedcyc
