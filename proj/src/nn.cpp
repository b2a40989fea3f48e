#include "fedcyc/nn.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace fedcyc {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::G: return "G";
    case Role::F: return "F";
    case Role::DX: return "DX";
    case Role::DY: return "DY";
    case Role::G_shared: return "G_shared";
    case Role::D_shared: return "D_shared";
    case Role::code_gen_g: return "code_gen_g";
    case Role::code_gen_d: return "code_gen_d";
  }
  return "?";
}

std::optional<Role> role_from_byte(std::uint8_t byte) {
  if (byte > static_cast<std::uint8_t>(Role::code_gen_d)) return std::nullopt;
  return static_cast<Role>(byte);
}

bool is_generator_role(Role role) {
  return role == Role::G || role == Role::F || role == Role::G_shared || role == Role::code_gen_g;
}

void ParamGroup::add(std::string name, Tensor value) {
  if (find(name)) {
    throw ModelError("duplicate parameter '" + name + "' in group " +
                     std::string(role_name(role_)));
  }
  entries_.push_back({std::move(name), std::move(value)});
}

const NamedTensor* ParamGroup::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const Tensor& ParamGroup::at(std::string_view name) const {
  if (const auto* e = find(name)) return e->value;
  throw ModelError("no parameter '" + std::string(name) + "' in group " +
                   std::string(role_name(role_)));
}

Tensor& ParamGroup::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ParamGroup::param_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamGroup ParamGroup::zeros_like() const {
  ParamGroup out(role_);
  for (const auto& e : entries_) out.entries_.push_back({e.name, Tensor::zeros(e.value.shape())});
  return out;
}

bool ParamGroup::congruent(const ParamGroup& other) const {
  if (role_ != other.role_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

bool bitwise_equal(const ParamGroup& a, const ParamGroup& b) {
  if (!a.congruent(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a.entries()[i].value, b.entries()[i].value)) return false;
  return true;
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ModelError("in_channels must be >= 1");
  if (base_width < 1) throw ModelError("base_width must be >= 1");
  if (depth < 1) throw ModelError("depth must be >= 1");
  if (depth > 16) throw ModelError("depth must be <= 16");
}

std::vector<std::size_t> generator_sites(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> sites{cfg.base_width};
  for (std::size_t i = 1; i <= cfg.depth; ++i) sites.push_back(cfg.base_width << i);
  for (std::size_t i = cfg.depth; i >= 1; --i) sites.push_back(cfg.base_width << (i - 1));
  return sites;
}

std::vector<std::size_t> discriminator_sites(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> sites;
  for (std::size_t i = 1; i < cfg.depth; ++i) sites.push_back(cfg.base_width << i);
  sites.push_back(cfg.base_width << cfg.depth);
  return sites;
}

namespace {

constexpr float kInitStd = 0.02f;

std::mt19937_64 role_rng(std::uint64_t seed, Role role) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(role) + 1u};
  return std::mt19937_64(seq);
}

Tensor normal_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, kInitStd);
  std::vector<float> data(element_count(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

Shape kernel(std::size_t out, std::size_t in) { return {out, in, 3, 3}; }

}  // namespace

ParamGroup build_generator(const ModelConfig& cfg, Role role, std::uint64_t seed) {
  cfg.validate();
  auto rng = role_rng(seed, role);
  const std::size_t w = cfg.base_width;
  ParamGroup g(role);
  g.add("enc0.w", normal_tensor(kernel(w, cfg.in_channels), rng));
  for (std::size_t i = 1; i <= cfg.depth; ++i)
    g.add("down" + std::to_string(i) + ".w", normal_tensor(kernel(w << i, w << (i - 1)), rng));
  for (std::size_t i = cfg.depth; i >= 1; --i)
    g.add("up" + std::to_string(i) + ".w", normal_tensor(kernel(w << (i - 1), w << i), rng));
  // With the global skip a zero output conv makes the untrained generator
  // the identity; the draw still happens so other entries keep their values.
  Tensor out_w = normal_tensor(kernel(cfg.in_channels, w), rng);
  g.add("out.w", cfg.residual_skip ? Tensor::zeros(out_w.shape()) : std::move(out_w));
  g.add("out.b", Tensor::zeros({cfg.in_channels}));
  return g;
}

ParamGroup build_discriminator(const ModelConfig& cfg, Role role, std::uint64_t seed) {
  cfg.validate();
  auto rng = role_rng(seed, role);
  const std::size_t w = cfg.base_width;
  ParamGroup d(role);
  d.add("in.w", normal_tensor(kernel(w, cfg.in_channels), rng));
  d.add("in.b", Tensor::zeros({w}));
  for (std::size_t i = 1; i < cfg.depth; ++i)
    d.add("down" + std::to_string(i) + ".w", normal_tensor(kernel(w << i, w << (i - 1)), rng));
  d.add("mid.w", normal_tensor(kernel(w << cfg.depth, w << (cfg.depth - 1)), rng));
  d.add("out.w", normal_tensor(kernel(1, w << cfg.depth), rng));
  d.add("out.b", Tensor::zeros({1}));
  return d;
}

ParamGroup build_code_generator(std::span<const std::size_t> sites, std::size_t hidden, Role role,
                                std::uint64_t seed) {
  if (sites.empty()) throw ModelError("code generator needs at least one AdaIN site");
  if (hidden < 1) throw ModelError("code generator hidden width must be >= 1");
  const std::size_t total = std::accumulate(sites.begin(), sites.end(), std::size_t{0});
  auto rng = role_rng(seed, role);
  ParamGroup c(role);
  c.add("fc1.w", normal_tensor({hidden, 2}, rng));
  c.add("fc1.b", Tensor::zeros({hidden}));
  c.add("fc2.w", normal_tensor({2 * total, hidden}, rng));
  // gamma half starts at 1 so the switchable nets begin as plain instance norm
  std::vector<float> bias(2 * total, 0.0f);
  std::fill(bias.begin(), bias.begin() + total, 1.0f);
  c.add("fc2.b", Tensor({2 * total}, std::move(bias)));
  return c;
}

ParamCounts param_count(std::span<const ParamGroup> groups) {
  ParamCounts counts;
  for (const auto& g : groups) {
    counts.per_group.emplace_back(g.role(), g.param_count());
    counts.total += g.param_count();
  }
  return counts;
}

template <typename T>
Var BoundGroup<T>::at(std::string_view name) const {
  const std::string qualified = std::string(role_name(role)) + "/" + std::string(name);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == qualified) return vars[i];
  throw ModelError("bound group has no parameter '" + qualified + "'");
}

template <typename T>
BoundGroup<T> bind(Tape<T>& tape, const ParamGroup& group, bool trainable) {
  BoundGroup<T> b;
  b.role = group.role();
  for (const auto& e : group.entries()) {
    std::string name = std::string(role_name(group.role())) + "/" + e.name;
    auto value = e.value.template cast<T>();
    b.vars.push_back(trainable ? tape.parameter(name, std::move(value))
                               : tape.constant(std::move(value)));
    b.names.push_back(std::move(name));
  }
  return b;
}

template <typename T>
std::vector<BoundGroup<T>> bind_handles(std::span<const ParamGroup> layout,
                                        std::span<const Var> handles) {
  std::vector<BoundGroup<T>> out;
  std::size_t k = 0;
  for (const auto& g : layout) {
    BoundGroup<T> b;
    b.role = g.role();
    for (const auto& e : g.entries()) {
      if (k >= handles.size()) throw ModelError("bind_handles: too few handles");
      b.names.push_back(std::string(role_name(g.role())) + "/" + e.name);
      b.vars.push_back(handles[k++]);
    }
    out.push_back(std::move(b));
  }
  if (k != handles.size()) throw ModelError("bind_handles: too many handles");
  return out;
}

template <typename T>
AdaInCode emit_code(Tape<T>& tape, const BoundGroup<T>& code_gen,
                    std::span<const std::size_t> sites, int domain) {
  if (domain != 0 && domain != 1) throw ModelError("code index must be 0 or 1");
  const std::size_t total = std::accumulate(sites.begin(), sites.end(), std::size_t{0});
  Var fc2_b = code_gen.at("fc2.b");
  if (tape.value(fc2_b).size() != 2 * total) {
    throw ModelError("code generator emits " + std::to_string(tape.value(fc2_b).size()) +
                     " values but the network has " + std::to_string(2 * total));
  }
  std::vector<T> onehot{T(0), T(0)};
  onehot[domain] = T(1);
  Var in = tape.constant(BasicTensor<T>({1, 2}, std::move(onehot)));
  Var h = ops::leaky_relu(tape, ops::dense(tape, in, code_gen.at("fc1.w"), code_gen.at("fc1.b")));
  Var out = ops::dense(tape, h, code_gen.at("fc2.w"), fc2_b);
  AdaInCode code;
  std::size_t offset = 0;
  for (std::size_t c : sites) {
    code.sites.emplace_back(ops::slice(tape, out, offset, c),
                            ops::slice(tape, out, total + offset, c));
    offset += c;
  }
  return code;
}

namespace {

template <typename T>
class SiteNorm {
 public:
  SiteNorm(Tape<T>& tape, const ModelConfig& cfg, std::span<const std::size_t> sites,
           const AdaInCode* code)
      : tape_(tape), adain_(cfg.norm == NormMode::adain), code_(code) {
    if (adain_ && !code) throw ModelError("adain network requires an AdaIN code");
    if (!adain_ && code) throw ModelError("instance-norm network does not take an AdaIN code");
    if (code && code->sites.size() != sites.size()) {
      throw ModelError("AdaIN code has " + std::to_string(code->sites.size()) +
                       " sites, network has " + std::to_string(sites.size()));
    }
  }

  Var operator()(Var x) {
    const std::size_t site = next_++;
    if (!adain_) return ops::instance_norm(tape_, x);
    const auto& [gamma, beta] = code_->sites.at(site);
    return ops::adain(tape_, x, gamma, beta);
  }

 private:
  Tape<T>& tape_;
  bool adain_;
  const AdaInCode* code_;
  std::size_t next_ = 0;
};

template <typename T>
void check_input(const Tape<T>& tape, Var input, const ModelConfig& cfg, const char* what) {
  const auto& s = tape.value(input).shape();
  const std::size_t mult = std::size_t{1} << cfg.depth;
  if (s.size() != 4 || s[1] != cfg.in_channels || s[2] % mult || s[3] % mult) {
    throw ShapeError(std::string(what) + ": input " + shape_string(s) + " needs " +
                     std::to_string(cfg.in_channels) + " channels and spatial size divisible by " +
                     std::to_string(mult));
  }
}

}  // namespace

template <typename T>
Var forward_generator(Tape<T>& tape, const BoundGroup<T>& p, const ModelConfig& cfg, Var input,
                      const AdaInCode* code) {
  check_input(tape, input, cfg, "generator");
  const auto sites = generator_sites(cfg);
  SiteNorm<T> norm(tape, cfg, sites, code);
  auto stage = [&](Var h, const std::string& name, std::size_t stride) {
    return ops::leaky_relu(tape, norm(ops::conv2d(tape, h, p.at(name), stride)));
  };

  std::vector<Var> skips;
  Var h = stage(input, "enc0.w", 1);
  skips.push_back(h);
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    h = stage(h, "down" + std::to_string(i) + ".w", 2);
    skips.push_back(h);
  }
  for (std::size_t i = cfg.depth; i >= 1; --i) {
    h = stage(ops::upsample_nearest(tape, h), "up" + std::to_string(i) + ".w", 1);
    h = ops::add(tape, h, skips[i - 1]);
  }
  Var out = ops::conv2d(tape, h, p.at("out.w"), p.at("out.b"), 1);
  if (cfg.residual_skip) out = ops::add(tape, out, input);
  if (cfg.tanh_output) out = ops::tanh(tape, out);
  return out;
}

template <typename T>
Var forward_discriminator(Tape<T>& tape, const BoundGroup<T>& p, const ModelConfig& cfg, Var input,
                          const AdaInCode* code) {
  check_input(tape, input, cfg, "discriminator");
  const auto sites = discriminator_sites(cfg);
  SiteNorm<T> norm(tape, cfg, sites, code);
  Var h = ops::leaky_relu(tape, ops::conv2d(tape, input, p.at("in.w"), p.at("in.b"), 2));
  for (std::size_t i = 1; i < cfg.depth; ++i) {
    h = ops::leaky_relu(tape,
                        norm(ops::conv2d(tape, h, p.at("down" + std::to_string(i) + ".w"), 2)));
  }
  h = ops::leaky_relu(tape, norm(ops::conv2d(tape, h, p.at("mid.w"), 1)));
  return ops::conv2d(tape, h, p.at("out.w"), p.at("out.b"), 1);
}

std::string_view variant_name(Variant v) {
  return v == Variant::standard ? "standard" : "switchable";
}

std::vector<Role> roles_for(Variant v) {
  if (v == Variant::standard) return {Role::G, Role::F, Role::DX, Role::DY};
  return {Role::G_shared, Role::D_shared, Role::code_gen_g, Role::code_gen_d};
}

const ParamGroup& CycleModels::group(Role role) const {
  for (const auto& g : groups)
    if (g.role() == role) return g;
  throw ModelError("model set has no group " + std::string(role_name(role)));
}

ParamGroup& CycleModels::group(Role role) {
  return const_cast<ParamGroup&>(std::as_const(*this).group(role));
}

CycleModels build_cycle_models(Variant variant, ModelConfig generator, ModelConfig discriminator,
                               std::uint64_t seed) {
  CycleModels m;
  m.variant = variant;
  const NormMode norm = variant == Variant::switchable ? NormMode::adain : NormMode::instance;
  generator.norm = norm;
  discriminator.norm = norm;
  m.generator = generator;
  m.discriminator = discriminator;
  if (variant == Variant::standard) {
    m.groups.push_back(build_generator(generator, Role::G, seed));
    m.groups.push_back(build_generator(generator, Role::F, seed));
    m.groups.push_back(build_discriminator(discriminator, Role::DX, seed));
    m.groups.push_back(build_discriminator(discriminator, Role::DY, seed));
  } else {
    m.groups.push_back(build_generator(generator, Role::G_shared, seed));
    m.groups.push_back(build_discriminator(discriminator, Role::D_shared, seed));
    m.groups.push_back(build_code_generator(generator_sites(generator),
                                            generator.code_hidden_width(), Role::code_gen_g, seed));
    m.groups.push_back(build_code_generator(discriminator_sites(discriminator),
                                            discriminator.code_hidden_width(), Role::code_gen_d,
                                            seed));
  }
  return m;
}

template <typename T>
CycleNetworks<T>::CycleNetworks(Tape<T>& tape, const CycleModels& models,
                                std::vector<BoundGroup<T>> bound)
    : tape_(tape), models_(models), bound_(std::move(bound)) {}

template <typename T>
CycleNetworks<T>::CycleNetworks(Tape<T>& tape, const CycleModels& models,
                                const std::function<bool(Role)>& trainable)
    : tape_(tape), models_(models) {
  for (const auto& g : models.groups) bound_.push_back(bind(tape, g, trainable(g.role())));
}

template <typename T>
const BoundGroup<T>& CycleNetworks<T>::bound(Role role) const {
  for (const auto& b : bound_)
    if (b.role == role) return b;
  throw ModelError("network role " + std::string(role_name(role)) + " is not bound");
}

template <typename T>
const AdaInCode& CycleNetworks<T>::code(Role code_gen, int domain) {
  const std::size_t slot = (code_gen == Role::code_gen_g ? 0 : 2) + static_cast<std::size_t>(domain);
  if (!codes_[slot]) {
    const auto sites = code_gen == Role::code_gen_g ? generator_sites(models_.generator)
                                                    : discriminator_sites(models_.discriminator);
    codes_[slot] = emit_code(tape_, bound(code_gen), sites, domain);
  }
  return *codes_[slot];
}

template <typename T>
Var CycleNetworks<T>::to_x(Var y) {
  if (models_.variant == Variant::standard)
    return forward_generator(tape_, bound(Role::G), models_.generator, y, nullptr);
  return forward_generator(tape_, bound(Role::G_shared), models_.generator, y,
                           &code(Role::code_gen_g, 0));
}

template <typename T>
Var CycleNetworks<T>::to_y(Var x) {
  if (models_.variant == Variant::standard)
    return forward_generator(tape_, bound(Role::F), models_.generator, x, nullptr);
  return forward_generator(tape_, bound(Role::G_shared), models_.generator, x,
                           &code(Role::code_gen_g, 1));
}

template <typename T>
Var CycleNetworks<T>::score_x(Var v) {
  if (models_.variant == Variant::standard)
    return forward_discriminator(tape_, bound(Role::DX), models_.discriminator, v, nullptr);
  return forward_discriminator(tape_, bound(Role::D_shared), models_.discriminator, v,
                               &code(Role::code_gen_d, 0));
}

template <typename T>
Var CycleNetworks<T>::score_y(Var v) {
  if (models_.variant == Variant::standard)
    return forward_discriminator(tape_, bound(Role::DY), models_.discriminator, v, nullptr);
  return forward_discriminator(tape_, bound(Role::D_shared), models_.discriminator, v,
                               &code(Role::code_gen_d, 1));
}

template <typename T>
std::vector<ParamGroup> gradients_to_groups(std::span<const ParamGroup> layout,
                                            std::span<const BasicNamedTensor<T>> grads) {
  std::vector<ParamGroup> out;
  std::size_t k = 0;
  for (const auto& g : layout) {
    ParamGroup dst(g.role());
    for (const auto& e : g.entries()) {
      if (k >= grads.size()) throw ModelError("gradient list shorter than layout");
      const std::string expected = std::string(role_name(g.role())) + "/" + e.name;
      if (grads[k].name != expected) {
        throw ModelError("gradient '" + grads[k].name + "' where '" + expected + "' expected");
      }
      dst.add(e.name, grads[k].value.template cast<float>());
      ++k;
    }
    out.push_back(std::move(dst));
  }
  return out;
}

std::vector<BasicNamedTensor<double>> flatten_to_double(std::span<const ParamGroup> groups) {
  std::vector<BasicNamedTensor<double>> out;
  for (const auto& g : groups)
    for (const auto& e : g.entries())
      out.push_back({std::string(role_name(g.role())) + "/" + e.name, e.value.cast<double>()});
  return out;
}

#define FEDCYC_INSTANTIATE(T)                                                                   \
  template struct BoundGroup<T>;                                                                \
  template BoundGroup<T> bind(Tape<T>&, const ParamGroup&, bool);                               \
  template std::vector<BoundGroup<T>> bind_handles(std::span<const ParamGroup>,                 \
                                                   std::span<const Var>);                       \
  template AdaInCode emit_code(Tape<T>&, const BoundGroup<T>&, std::span<const std::size_t>,   \
                               int);                                                            \
  template Var forward_generator(Tape<T>&, const BoundGroup<T>&, const ModelConfig&, Var,      \
                                 const AdaInCode*);                                             \
  template Var forward_discriminator(Tape<T>&, const BoundGroup<T>&, const ModelConfig&, Var,  \
                                     const AdaInCode*);                                         \
  template class CycleNetworks<T>;                                                              \
  template std::vector<ParamGroup> gradients_to_groups(std::span<const ParamGroup>,            \
                                                       std::span<const BasicNamedTensor<T>>);

FEDCYC_INSTANTIATE(float)
FEDCYC_INSTANTIATE(double)

#undef FEDCYC_INSTANTIATE

}  // namespace fedcyc
