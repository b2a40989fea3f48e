#include "fedcyc/fed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <thread>

namespace fedcyc {

std::string_view aggregation_name(Aggregation a) { return a == Aggregation::sum ? "sum" : "mean"; }

std::optional<Aggregation> parse_aggregation(std::string_view text) {
  if (text == "sum") return Aggregation::sum;
  if (text == "mean") return Aggregation::mean;
  return std::nullopt;
}

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

std::optional<OptimizerKind> parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  return std::nullopt;
}

std::string_view step_mode_name(StepMode m) {
  return m == StepMode::alternating ? "alternating" : "objective";
}

std::optional<StepMode> parse_step_mode(std::string_view text) {
  if (text == "alternating") return StepMode::alternating;
  if (text == "objective" || text == "alg1-combined") return StepMode::objective;
  return std::nullopt;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw FedError("uniform_below(0)");
  // reject the top partial bucket
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  for (;;) {
    const std::uint64_t r = rng();
    if (r < limit) return r % n;
  }
}

std::mt19937_64 round_rng(std::uint64_t seed, std::uint64_t round) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(round >> 32)};
  return std::mt19937_64(seq);
}

BatchSampler::BatchSampler(std::size_t data_size, std::size_t batch_size, std::uint64_t seed)
    : n_(data_size), batch_(batch_size), seed_(seed) {
  if (n_ == 0) throw FedError("client has an empty dataset");
  if (batch_ == 0 || batch_ > n_) {
    throw FedError("batch size " + std::to_string(batch_) + " not in [1, " + std::to_string(n_) + "]");
  }
}

std::vector<std::size_t> BatchSampler::indices(std::uint64_t round) const {
  std::vector<std::size_t> perm(n_);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = round_rng(seed_, round);
  for (std::size_t i = 0; i < batch_; ++i) {
    const auto j = i + uniform_below(rng, n_ - i);
    std::swap(perm[i], perm[j]);
  }
  perm.resize(batch_);
  return perm;
}

std::vector<Tensor> ClientSpec::batch(std::uint64_t round) const {
  if (!data || data->empty()) throw FedError("client " + std::to_string(id) + " has no data");
  BatchSampler sampler(data->size(), batch_size, seed);
  std::vector<Tensor> out;
  for (auto i : sampler.indices(round)) out.push_back((*data)[i]);
  if (augment) {
    // separate stream from the sampler's
    auto rng = round_rng(seed ^ 0x9e3779b97f4a7c15ull, round);
    for (auto& s : out) {
      Shape shape{1};
      shape.insert(shape.end(), s.shape().begin(), s.shape().end());
      auto flipped = random_flip(Tensor(shape, s.storage()), rng);
      s = Tensor(s.shape(), flipped.storage());
    }
  }
  return out;
}

std::vector<ClientSpec> make_clients(const TaskData& task, std::size_t per_domain,
                                     std::size_t batch_size, std::uint64_t seed) {
  if (per_domain == 0) throw FedError("need at least one client per domain");
  std::vector<ClientSpec> clients;
  for (const DomainDataset* ds : {&task.x, &task.y}) {
    if (ds->samples.size() < per_domain) {
      throw FedError("domain " + std::string(domain_name(ds->domain)) + " has fewer samples than clients");
    }
    std::vector<std::vector<Tensor>> parts(per_domain);
    for (std::size_t i = 0; i < ds->samples.size(); ++i) parts[i % per_domain].push_back(ds->samples[i]);
    for (auto& p : parts) {
      ClientSpec c;
      c.id = static_cast<std::uint32_t>(clients.size());
      c.domain = ds->domain;
      c.batch_size = std::min(batch_size, p.size());
      c.data = std::make_shared<const std::vector<Tensor>>(std::move(p));
      c.seed = round_rng(seed, 1000 + c.id)();
      clients.push_back(std::move(c));
    }
  }
  return clients;
}

std::vector<std::size_t> select_clients(std::uint64_t seed, std::uint64_t round, std::size_t count,
                                        std::size_t n) {
  if (n < 1 || n > count) {
    throw FedError("cannot select " + std::to_string(n) + " of " + std::to_string(count) + " clients");
  }
  std::vector<std::size_t> ids(count);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  auto rng = round_rng(seed, round);
  for (std::size_t i = 0; i < n; ++i) std::swap(ids[i], ids[i + uniform_below(rng, count - i)]);
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

GradientMessage message_for(const ClientSpec& c, std::uint32_t round, StepKind step,
                            std::vector<ParamGroup> groups) {
  GradientMessage m;
  m.round = round;
  m.client = c.id;
  m.domain = c.domain;
  m.step = step;
  m.groups = std::move(groups);
  return m;
}

bool discriminator_side(const ParamGroup& g) { return !is_generator_role(g.role()); }

auto all_trainable = [](Role) { return true; };

// Plain gradient of the local objective for every network.
LocalResult local_objective_plain(const CycleModels& models, std::span<const Tensor> batch, Domain d,
                                  const LossWeights& w) {
  Tape<float> t;
  CycleNetworks<float> nets(t, models, all_trainable);
  LocalGraph g = build_local_graph<float>(t, nets, nullptr, t.constant(make_batch(batch)), d, w);
  LocalResult r;
  r.report.domain = d;
  r.report.terms = {t.value(g.adversarial_real).item(), t.value(g.adversarial_fake).item(),
                    t.value(g.cycle).item(), t.value(g.identity).item()};
  r.report.loss = t.value(g.objective).item();
  r.report.d_step_loss = 0.5 * (r.report.terms.adversarial_real + r.report.terms.adversarial_fake);
  auto grads = t.backward(g.objective);
  r.gradients.groups = gradients_to_groups<float>(models.groups, grads);
  return r;
}

}  // namespace

ClientOutput client_round(const ClientSpec& client, const CycleModels& snapshot,
                          const LossWeights& weights, std::uint32_t round, StepMode mode) {
  const auto batch = client.batch(round);
  ClientOutput out;
  if (mode == StepMode::objective) {
    auto r = local_objective_plain(snapshot, batch, client.domain, weights);
    out.report = r.report;
    out.messages.push_back(message_for(client, round, StepKind::combined, std::move(r.gradients.groups)));
    return out;
  }
  auto r = local_objective(snapshot, batch, client.domain, weights);
  out.report = r.report;
  std::vector<ParamGroup> d, g;
  for (auto& grp : r.gradients.groups) (discriminator_side(grp) ? d : g).push_back(std::move(grp));
  out.messages.push_back(message_for(client, round, StepKind::d_step, std::move(d)));
  out.messages.push_back(message_for(client, round, StepKind::g_step, std::move(g)));
  return out;
}

std::vector<ParamGroup> aggregate(std::span<const GradientMessage> messages, Aggregation mode) {
  if (messages.empty()) throw FedError("no messages to aggregate");
  std::vector<const GradientMessage*> order;
  for (const auto& m : messages) order.push_back(&m);
  std::sort(order.begin(), order.end(),
            [](const GradientMessage* a, const GradientMessage* b) { return a->client < b->client; });
  const auto& first = *order.front();
  for (const auto* m : order) {
    if (m->round != first.round) {
      throw FedError("message from client " + std::to_string(m->client) + " is for round " +
                     std::to_string(m->round) + ", expected " + std::to_string(first.round));
    }
    if (m->groups.size() != first.groups.size()) throw FedError("messages carry different group sets");
    for (std::size_t g = 0; g < first.groups.size(); ++g) {
      if (!m->groups[g].congruent(first.groups[g])) {
        throw FedError("gradient group " + std::string(role_name(m->groups[g].role())) +
                       " from client " + std::to_string(m->client) + " does not match");
      }
    }
  }

  std::vector<ParamGroup> out;
  for (std::size_t g = 0; g < first.groups.size(); ++g) {
    ParamGroup sum(first.groups[g].role());
    for (std::size_t e = 0; e < first.groups[g].size(); ++e) {
      const auto& proto = first.groups[g].entries()[e];
      std::vector<double> acc(proto.value.size(), 0.0);
      for (const auto* m : order) {
        const auto v = m->groups[g].entries()[e].value.data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
      }
      const double scale = mode == Aggregation::mean ? 1.0 / static_cast<double>(order.size()) : 1.0;
      std::vector<float> f(acc.size());
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(acc[i] * scale);
      sum.add(proto.name, Tensor(proto.value.shape(), std::move(f)));
    }
    out.push_back(std::move(sum));
  }
  return out;
}

Optimizer::Optimizer(OptimizerSettings settings, std::span<const ParamGroup> params)
    : settings_(settings) {
  if (!(settings_.beta1 >= 0 && settings_.beta1 < 1 && settings_.beta2 >= 0 && settings_.beta2 < 1 &&
        settings_.epsilon > 0)) {
    throw FedError("adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
  for (const auto& g : params) {
    Slot s{g.role(), {}, {}, 0};
    if (settings_.kind == OptimizerKind::adam) {
      for (const auto& e : g.entries()) {
        s.m.emplace_back(e.value.size(), 0.0);
        s.v.emplace_back(e.value.size(), 0.0);
      }
    }
    slots_.push_back(std::move(s));
  }
}

Optimizer::Slot& Optimizer::slot(Role role) {
  for (auto& s : slots_)
    if (s.role == role) return s;
  throw FedError("optimizer has no state for group " + std::string(role_name(role)));
}

std::uint64_t Optimizer::steps(Role role) const {
  for (const auto& s : slots_)
    if (s.role == role) return s.t;
  throw FedError("optimizer has no state for group " + std::string(role_name(role)));
}

void Optimizer::step(std::vector<ParamGroup>& params, std::span<const ParamGroup> grads, double lr) {
  for (const auto& grad : grads) {
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const ParamGroup& p) { return p.role() == grad.role(); });
    if (it == params.end() || !it->congruent(grad)) {
      throw FedError("gradient group " + std::string(role_name(grad.role())) +
                     " does not match the model's parameters");
    }
    for (const auto& e : grad.entries()) {
      require_finite<float>(e.value.data(), "gradient of " + std::string(role_name(grad.role())) + "/" + e.name);
    }
  }
  for (const auto& grad : grads) {
    auto& p = *std::find_if(params.begin(), params.end(),
                            [&](const ParamGroup& q) { return q.role() == grad.role(); });
    Slot& s = slot(grad.role());
    ++s.t;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    for (std::size_t e = 0; e < grad.size(); ++e) {
      auto g = grad.entries()[e].value.data();
      auto w = p.entries()[e].value.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double update;
        if (settings_.kind == OptimizerKind::sgd) {
          update = lr * g[i];
        } else {
          double& m = s.m[e][i];
          double& v = s.v[e][i];
          m = b1 * m + (1 - b1) * g[i];
          v = b2 * v + (1 - b2) * double(g[i]) * g[i];
          update = lr * (m / c1) / (std::sqrt(v / c2) + settings_.epsilon);
        }
        w[i] = static_cast<float>(w[i] - update);
      }
      require_finite<float>(w, "parameter " + std::string(role_name(p.role())) + "/" +
                                   p.entries()[e].name + " after update");
    }
  }
}

double lr_schedule(std::uint64_t k, std::uint64_t total, double eta) {
  if (k >= total) return 0.0;
  const double half = static_cast<double>(total) / 2.0;
  const double kk = static_cast<double>(k);
  if (kk < half) return eta;
  return eta * (1.0 - (kk - half) / half);
}

std::uint32_t param_checksum(std::span<const ParamGroup> groups) {
  GradientMessage m;
  m.groups.assign(groups.begin(), groups.end());
  return crc32(encode(m));
}

std::uint32_t TrainHistory::checksum() const {
  std::vector<std::uint8_t> bytes;
  auto put = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (const auto& r : rounds) {
    put(r.round);
    put(std::bit_cast<std::uint64_t>(r.lr));
    put(std::bit_cast<std::uint64_t>(r.d_step_loss));
    put(std::bit_cast<std::uint64_t>(r.g_step_loss));
    for (auto id : r.selected) put(id);
    for (const auto& l : r.losses) put(std::bit_cast<std::uint64_t>(l.report.loss));
    put(r.param_checksum);
  }
  return crc32(bytes);
}

void TrainConfig::validate(std::size_t client_count) const {
  generator.validate();
  discriminator.validate();
  weights.validate();
  if (!(lr >= 0) || !std::isfinite(lr)) throw FedError("learning rate must be finite and >= 0");
  if (client_count > 0 && selected > client_count) {
    throw FedError("selected clients (" + std::to_string(selected) + ") exceed client count (" +
                   std::to_string(client_count) + ")");
  }
}

Server::Server(CycleModels initial, OptimizerSettings optimizer, Aggregation aggregation)
    : models_(std::move(initial)), optimizer_(optimizer, models_.groups), aggregation_(aggregation) {}

void Server::apply(std::span<const GradientMessage> messages, std::uint32_t round, double lr) {
  std::map<StepKind, std::vector<GradientMessage>> by_step;
  for (const auto& m : messages) {
    if (m.round != round) {
      throw FedError("server at round " + std::to_string(round) + " got a message for round " +
                     std::to_string(m.round) + " from client " + std::to_string(m.client));
    }
    by_step[m.step].push_back(m);
  }
  for (StepKind k : {StepKind::d_step, StepKind::g_step, StepKind::combined}) {
    auto it = by_step.find(k);
    if (it == by_step.end()) continue;
    const auto grads = aggregate(it->second, aggregation_);
    optimizer_.step(models_.groups, grads, lr);
  }
}

namespace {

void check_clients(std::span<const ClientSpec> clients) {
  bool has_x = false, has_y = false;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].id != i) throw FedError("client ids must be 0..n-1 in order");
    (clients[i].domain == Domain::X ? has_x : has_y) = true;
  }
  if (!has_x || !has_y) throw FedError("need at least one client per domain");
}

double mean_of(const std::vector<ClientLoss>& losses, double LocalLossReport::*field) {
  double s = 0;
  for (const auto& l : losses) s += l.report.*field;
  return losses.empty() ? 0.0 : s / static_cast<double>(losses.size());
}

}  // namespace

TrainResult train_federated(const TrainConfig& config, std::span<const ClientSpec> clients,
                            TrainOptions options) {
  check_clients(clients);
  config.validate(clients.size());
  const std::size_t n = config.selected ? config.selected : clients.size();

  Server server(build_cycle_models(config.variant, config.generator, config.discriminator,
                                   config.model_seed),
                config.optimizer, config.aggregation);
  auto links = make_links(config.transport, clients.size(), config.host, config.port);
  const std::size_t per_client = config.step_mode == StepMode::alternating ? 2 : 1;

  TrainResult result;
  for (std::size_t k = 0; k < config.rounds; ++k) {
    const auto round = static_cast<std::uint32_t>(k);
    RoundRecord rec;
    rec.round = round;
    rec.lr = lr_schedule(k, config.rounds, config.lr);
    const auto chosen = select_clients(config.selection_seed, k, clients.size(), n);
    const CycleModels& snapshot = server.broadcast();

    std::vector<LocalLossReport> reports(chosen.size());
    std::vector<std::exception_ptr> errors(chosen.size());
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      workers.emplace_back([&, i] {
        const auto& c = clients[chosen[i]];
        Link& link = *links[c.id];
        try {
          auto out = client_round(c, snapshot, config.weights, round, config.step_mode);
          reports[i] = out.report;
          for (const auto& m : out.messages) send_message(link, m);
        } catch (...) {
          errors[i] = std::current_exception();
          link.close();  // unblocks the server's receive
        }
      });
    }
    std::vector<GradientMessage> inbox;
    std::exception_ptr transport_error;
    for (std::size_t i = 0; i < chosen.size() && !transport_error; ++i) {
      try {
        for (std::size_t j = 0; j < per_client; ++j) inbox.push_back(recv_message(*links[chosen[i]]));
      } catch (...) {
        transport_error = std::current_exception();
      }
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    if (transport_error) std::rethrow_exception(transport_error);

    server.apply(inbox, round, rec.lr);

    for (std::size_t i = 0; i < chosen.size(); ++i) {
      rec.selected.push_back(clients[chosen[i]].id);
      rec.losses.push_back({clients[chosen[i]].id, reports[i]});
    }
    rec.d_step_loss = mean_of(rec.losses, &LocalLossReport::d_step_loss);
    rec.g_step_loss = mean_of(rec.losses, &LocalLossReport::g_step_loss);
    rec.param_checksum = param_checksum(server.broadcast().groups);
    result.history.rounds.push_back(std::move(rec));
    if (options.keep_trajectory) result.trajectory.push_back(server.broadcast().groups);
  }
  for (auto& l : links) l->close();
  result.models = server.broadcast();
  return result;
}

TrainResult train_centralized(const TrainConfig& config, const ClientSpec& x_source,
                              const ClientSpec& y_source, TrainOptions options) {
  if (x_source.domain != Domain::X || y_source.domain != Domain::Y) {
    throw FedError("centralized sources must be one X and one Y dataset");
  }
  config.validate(0);
  CycleModels models =
      build_cycle_models(config.variant, config.generator, config.discriminator, config.model_seed);
  Optimizer optimizer(config.optimizer, models.groups);

  TrainResult result;
  for (std::size_t k = 0; k < config.rounds; ++k) {
    RoundRecord rec;
    rec.round = static_cast<std::uint32_t>(k);
    rec.lr = lr_schedule(k, config.rounds, config.lr);
    const auto bx = x_source.batch(k), by = y_source.batch(k);

    if (config.step_mode == StepMode::alternating) {
      auto r = centralized_loss(models, bx, by, config.weights);
      std::vector<ParamGroup> d, g;
      for (auto& grp : r.gradients.groups) (discriminator_side(grp) ? d : g).push_back(std::move(grp));
      optimizer.step(models.groups, d, rec.lr);
      optimizer.step(models.groups, g, rec.lr);
      // per-discriminator scale, comparable with the federated record
      rec.d_step_loss = r.d_step_loss / 2;
      rec.g_step_loss = r.g_step_loss / 2;
      rec.losses.push_back({0, LocalLossReport{Domain::X, r.loss, {}, r.d_step_loss, r.g_step_loss}});
    } else {
      Tape<float> t;
      CycleNetworks<float> nets(t, models, all_trainable);
      CentralGraph g = build_central_graph<float>(t, nets, nullptr, t.constant(make_batch(bx)),
                                                  t.constant(make_batch(by)), config.weights);
      const double loss = t.value(g.objective).item();
      rec.d_step_loss = 0.25 * (t.value(g.gan_to_x).item() + t.value(g.gan_to_y).item());
      auto grads = gradients_to_groups<float>(models.groups, t.backward(g.objective));
      optimizer.step(models.groups, grads, rec.lr);
      rec.losses.push_back({0, LocalLossReport{Domain::X, loss, {}, 2 * rec.d_step_loss, 0.0}});
    }
    rec.param_checksum = param_checksum(models.groups);
    result.history.rounds.push_back(std::move(rec));
    if (options.keep_trajectory) result.trajectory.push_back(models.groups);
  }
  result.models = std::move(models);
  return result;
}

std::pair<ClientSpec, ClientSpec> whole_domain_sources(const TaskData& task, std::size_t batch_size,
                                                       std::uint64_t seed) {
  auto clients = make_clients(task, 1, batch_size, seed);
  return {clients[0], clients[1]};
}

namespace {

std::vector<Tensor> translate(const CycleModels& models, std::span<const Tensor> samples, bool to_x) {
  std::vector<Tensor> out;
  constexpr std::size_t chunk = 32;
  for (std::size_t off = 0; off < samples.size(); off += chunk) {
    const auto part = samples.subspan(off, std::min(chunk, samples.size() - off));
    Tape<float> t;
    CycleNetworks<float> nets(t, models, [](Role) { return false; });
    Var in = t.constant(make_batch(part));
    Var y = to_x ? nets.to_x(in) : nets.to_y(in);
    const Tensor result = t.value(y);
    const std::size_t per = result.size() / part.size();
    for (std::size_t i = 0; i < part.size(); ++i) {
      std::vector<float> v(result.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                           result.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
      out.emplace_back(part[i].shape(), std::move(v));
    }
  }
  return out;
}

}  // namespace

std::vector<Tensor> translate_to_x(const CycleModels& models, std::span<const Tensor> samples) {
  return translate(models, samples, true);
}

std::vector<Tensor> translate_to_y(const CycleModels& models, std::span<const Tensor> samples) {
  return translate(models, samples, false);
}

}  // namespace fedcyc
