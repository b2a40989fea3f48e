#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedcyc/nn.hpp"
#include "fedcyc/tape.hpp"

namespace fedcyc {

enum class GanMode { least_squares, vanilla };
enum class Target { real, fake };
enum class Domain : std::uint8_t { X = 0, Y = 1 };

std::string_view gan_mode_name(GanMode mode);
std::optional<GanMode> parse_gan_mode(std::string_view text);
std::string_view domain_name(Domain d);
inline Domain other(Domain d) { return d == Domain::X ? Domain::Y : Domain::X; }

class ObjectiveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LossWeights {
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;
  GanMode gan_mode = GanMode::least_squares;

  void validate() const;
};

/// Weighted terms of one domain-local objective.
struct LossBreakdown {
  double adversarial_real = 0.0;
  double adversarial_fake = 0.0;
  double cycle = 0.0;     // already multiplied by lambda_cycle
  double identity = 0.0;  // already multiplied by lambda_identity

  double total() const { return adversarial_real + adversarial_fake + cycle + identity; }
};

struct LocalLossReport {
  Domain domain = Domain::X;
  double loss = 0.0;
  LossBreakdown terms;
  /// Training-step losses evaluated at the same parameters.
  double d_step_loss = 0.0;
  double g_step_loss = 0.0;
};

/// Least squares: mean (s-1)^2 for real, mean s^2 for fake.
/// Vanilla: binary cross-entropy on raw scores, mean softplus(-s) for real,
/// mean softplus(s) for fake (the negated log D / log(1-D) of the minimax).
template <typename T>
Var adversarial_term(Tape<T>& t, Var scores, Target target, GanMode mode);

/// Mean absolute difference.
template <typename T>
Var cycle_term(Tape<T>& t, Var recon, Var original);

template <typename T>
Var identity_term(Tape<T>& t, Var output, Var input) {
  return cycle_term(t, output, input);
}

/// Stacks samples [C,H,W] into a batch [N,C,H,W]; empty is an error.
Tensor make_batch(std::span<const Tensor> samples);

/// Tape handles for the pieces of one domain-local objective.
struct LocalGraph {
  Var adversarial_real, adversarial_fake, cycle, identity;  // weighted
  Var objective;  // sum of the four
  Var d_step;     // 1/2 [adv(D_own(b), real) + adv(D_other(translate(b)), fake)]
  Var g_step;     // adv(D_other(translate(b)), real) + cycle + identity
};

/// Builds the domain-`d` objective for one batch on `nets`. With `frozen`
/// (a view of the same parameters bound as constants) the step losses are
/// built too: the D-step sees the translated batch as a constant and the
/// G-step scores it through the frozen discriminator. Without it only the
/// objective terms exist and d_step/g_step stay invalid.
template <typename T>
LocalGraph build_local_graph(Tape<T>& t, CycleNetworks<T>& nets, CycleNetworks<T>* frozen,
                             Var batch, Domain d, const LossWeights& w);

/// Pieces of the two-batch objective written in its min-max pair form:
/// L_GAN(G, D_X) + L_GAN(F, D_Y) + lambda * cycle + lambda_id * identity.
struct CentralGraph {
  Var gan_to_x;  // L_GAN(G, D_X): D_X(x) real, D_X(G(y)) fake
  Var gan_to_y;  // L_GAN(F, D_Y): D_Y(y) real, D_Y(F(x)) fake
  Var cycle, identity;
  Var objective;
  Var d_step;
  Var g_step;
};

template <typename T>
CentralGraph build_central_graph(Tape<T>& t, CycleNetworks<T>& nets, CycleNetworks<T>* frozen,
                                 Var batch_x, Var batch_y, const LossWeights& w);

/// Gradients grouped like `models.groups`. Discriminator-role groups come
/// from the D-step loss, generator-role groups from the G-step loss.
struct StepGradients {
  std::vector<ParamGroup> groups;

  const ParamGroup& group(Role role) const;
};

struct LocalResult {
  LocalLossReport report;
  StepGradients gradients;
};

/// Domain-local objective and its training gradients. Sees one domain's
/// batch only.
LocalResult local_objective(const CycleModels& models, std::span<const Tensor> batch, Domain d,
                            const LossWeights& w);

inline LocalResult local_objective_x(const CycleModels& m, std::span<const Tensor> batch_x,
                                     const LossWeights& w) {
  return local_objective(m, batch_x, Domain::X, w);
}

inline LocalResult local_objective_y(const CycleModels& m, std::span<const Tensor> batch_y,
                                     const LossWeights& w) {
  return local_objective(m, batch_y, Domain::Y, w);
}

struct CentralResult {
  double loss = 0.0;
  double d_step_loss = 0.0;
  double g_step_loss = 0.0;
  StepGradients gradients;
};

/// Non-federated baseline on both batches at once.
CentralResult centralized_loss(const CycleModels& models, std::span<const Tensor> batch_x,
                               std::span<const Tensor> batch_y, const LossWeights& w);

/// Value and plain gradient of an objective w.r.t. every parameter (no
/// step split), in precision T. Used by the decomposition identity checks.
template <typename T>
struct ObjectiveGradient {
  double value = 0.0;
  std::vector<BasicNamedTensor<T>> gradient;
};

template <typename T>
ObjectiveGradient<T> local_objective_gradient(const CycleModels& models, const Tensor& batch,
                                              Domain d, const LossWeights& w);

template <typename T>
ObjectiveGradient<T> central_objective_gradient(const CycleModels& models, const Tensor& batch_x,
                                                const Tensor& batch_y, const LossWeights& w);

}  // namespace fedcyc
