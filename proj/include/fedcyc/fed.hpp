#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fedcyc/codec.hpp"
#include "fedcyc/data.hpp"
#include "fedcyc/nn.hpp"
#include "fedcyc/objectives.hpp"
#include "fedcyc/transport.hpp"

namespace fedcyc {

class FedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Aggregation { sum, mean };
enum class OptimizerKind { sgd, adam };
/// alternating: D-step and G-step gradients, sent as two messages.
/// objective: one plain gradient of the local objective for every network,
/// sent as one combined message (descent on the literal objective).
enum class StepMode { alternating, objective };

std::string_view aggregation_name(Aggregation a);
std::optional<Aggregation> parse_aggregation(std::string_view text);
std::string_view optimizer_name(OptimizerKind k);
std::optional<OptimizerKind> parse_optimizer(std::string_view text);
std::string_view step_mode_name(StepMode m);
std::optional<StepMode> parse_step_mode(std::string_view text);

/// Uniform integer in [0, n) from raw engine output (rejection sampling),
/// so sequences do not depend on the standard library's distributions.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

std::mt19937_64 round_rng(std::uint64_t seed, std::uint64_t round);

/// Per-round reshuffle of a client's local indices; the batch is the first
/// `batch_size` of the round's permutation.
class BatchSampler {
 public:
  BatchSampler(std::size_t data_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> indices(std::uint64_t round) const;

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
};

struct ClientSpec {
  std::uint32_t id = 0;
  Domain domain = Domain::X;
  std::shared_ptr<const std::vector<Tensor>> data;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  bool augment = false;  // random left-right flips

  std::vector<Tensor> batch(std::uint64_t round) const;
};

/// Splits each domain's samples round-robin over `per_domain` clients.
/// X clients get ids 0..per_domain-1, Y clients the next per_domain ids.
std::vector<ClientSpec> make_clients(const TaskData& task, std::size_t per_domain,
                                     std::size_t batch_size, std::uint64_t seed);

/// n of `count` client indices, uniform without replacement, sorted.
/// Deterministic in (seed, round).
std::vector<std::size_t> select_clients(std::uint64_t seed, std::uint64_t round, std::size_t count,
                                        std::size_t n);

struct ClientOutput {
  std::vector<GradientMessage> messages;
  LocalLossReport report;
};

/// One client's work for a round: its own batch, its domain's objective,
/// gradients of every group packed into messages.
ClientOutput client_round(const ClientSpec& client, const CycleModels& snapshot,
                          const LossWeights& weights, std::uint32_t round, StepMode mode);

/// Elementwise sum (or mean) of the messages' gradients, added in
/// ascending client-id order. All messages must carry congruent groups.
std::vector<ParamGroup> aggregate(std::span<const GradientMessage> messages, Aggregation mode);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments per parameter, in group/entry order, plus a step count per group.
class Optimizer {
 public:
  Optimizer(OptimizerSettings settings, std::span<const ParamGroup> params);

  /// Updates the groups of `params` named by `grads` roles. Throws
  /// NumericError naming the parameter on a non-finite gradient or result.
  void step(std::vector<ParamGroup>& params, std::span<const ParamGroup> grads, double lr);

  const OptimizerSettings& settings() const { return settings_; }
  std::uint64_t steps(Role role) const;

 private:
  struct Slot {
    Role role;
    std::vector<std::vector<double>> m, v;
    std::uint64_t t = 0;
  };
  Slot& slot(Role role);

  OptimizerSettings settings_;
  std::vector<Slot> slots_;
};

/// eta until K/2, then linear decay reaching 0 at k = K.
double lr_schedule(std::uint64_t k, std::uint64_t total, double eta);

struct ClientLoss {
  std::uint32_t client = 0;
  LocalLossReport report;
};

struct RoundRecord {
  std::uint32_t round = 0;
  double lr = 0.0;
  std::vector<std::uint32_t> selected;
  std::vector<ClientLoss> losses;
  /// Mean per-discriminator D-step loss over the round.
  double d_step_loss = 0.0;
  double g_step_loss = 0.0;
  std::uint32_t param_checksum = 0;
};

struct TrainHistory {
  std::vector<RoundRecord> rounds;

  /// CRC over every record's round, lr bits, loss bits and parameter checksum.
  std::uint32_t checksum() const;
};

/// CRC32 of the encoded parameter groups.
std::uint32_t param_checksum(std::span<const ParamGroup> groups);

struct TrainConfig {
  Variant variant = Variant::standard;
  ModelConfig generator;
  ModelConfig discriminator;
  std::uint64_t model_seed = 1;
  LossWeights weights;
  std::size_t rounds = 400;
  double lr = 2e-4;
  OptimizerSettings optimizer;
  Aggregation aggregation = Aggregation::mean;
  std::size_t selected = 0;  // clients per round; 0 = all
  std::uint64_t selection_seed = 1;
  StepMode step_mode = StepMode::alternating;
  TransportKind transport = TransportKind::in_process;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  void validate(std::size_t client_count) const;
};

/// Holds parameters and optimizer state. Sees gradients only: it never
/// receives a data batch.
class Server {
 public:
  Server(CycleModels initial, OptimizerSettings optimizer, Aggregation aggregation);

  const CycleModels& broadcast() const { return models_; }

  /// Aggregates one round's messages and applies them: D-step groups first,
  /// then G-step groups; combined messages in one update. Messages may
  /// arrive in any order.
  void apply(std::span<const GradientMessage> messages, std::uint32_t round, double lr);

 private:
  CycleModels models_;
  Optimizer optimizer_;
  Aggregation aggregation_;
};

struct TrainResult {
  TrainHistory history;
  CycleModels models;
  /// Parameters after every round, when requested.
  std::vector<std::vector<ParamGroup>> trajectory;
};

struct TrainOptions {
  bool keep_trajectory = false;
};

/// Broadcast, client rounds on the selected clients (one thread each),
/// transport, aggregation and optimizer step, `rounds` times.
TrainResult train_federated(const TrainConfig& config, std::span<const ClientSpec> clients,
                            TrainOptions options = {});

/// Non-federated baseline on both domains' batches at once, drawn with
/// `x_source` and `y_source`'s samplers. Same optimizer and schedule.
TrainResult train_centralized(const TrainConfig& config, const ClientSpec& x_source,
                              const ClientSpec& y_source, TrainOptions options = {});

/// One client per domain owning that domain's whole training set.
std::pair<ClientSpec, ClientSpec> whole_domain_sources(const TaskData& task, std::size_t batch_size,
                                                       std::uint64_t seed);

/// Generator translating the degraded domain into the clean one (G: Y -> X).
std::vector<Tensor> translate_to_x(const CycleModels& models, std::span<const Tensor> samples);
std::vector<Tensor> translate_to_y(const CycleModels& models, std::span<const Tensor> samples);

}  // namespace fedcyc
