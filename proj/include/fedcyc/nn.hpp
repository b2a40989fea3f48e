#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcyc/tape.hpp"
#include "fedcyc/tensor.hpp"

namespace fedcyc {

/// Network roles. The numeric values are the role bytes on the wire.
enum class Role : std::uint8_t {
  G = 0,           // Y -> X
  F = 1,           // X -> Y
  DX = 2,
  DY = 3,
  G_shared = 4,    // switchable generator
  D_shared = 5,    // switchable discriminator
  code_gen_g = 6,
  code_gen_d = 7,
};

std::string_view role_name(Role role);
std::optional<Role> role_from_byte(std::uint8_t byte);
/// True for roles updated by the generator step (G, F, G_shared, code_gen_g).
bool is_generator_role(Role role);

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Named, ordered parameters (or gradients) of one network role.
/// Entry order is stable and defines the serialization order.
class ParamGroup {
 public:
  ParamGroup() = default;
  explicit ParamGroup(Role role) : role_(role) {}

  Role role() const { return role_; }
  void add(std::string name, Tensor value);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  const NamedTensor* find(std::string_view name) const;

  std::size_t param_count() const;

  /// Same role, names and shapes, values zeroed.
  ParamGroup zeros_like() const;
  /// Same role, names and shapes.
  bool congruent(const ParamGroup& other) const;

 private:
  Role role_ = Role::G;
  std::vector<NamedTensor> entries_;
};

bool bitwise_equal(const ParamGroup& a, const ParamGroup& b);

enum class NormMode { instance, adain };

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t base_width = 8;
  /// Number of down/up stages (stride-2 stages for discriminators).
  std::size_t depth = 2;
  /// Global input-to-output skip (residual learning).
  bool residual_skip = false;
  NormMode norm = NormMode::instance;
  bool tanh_output = false;
  /// Hidden width of the paired AdaIN code generator; 0 selects 4 * base_width.
  std::size_t code_hidden = 0;

  void validate() const;
  std::size_t code_hidden_width() const { return code_hidden ? code_hidden : 4 * base_width; }
};

/// Channel counts of the normalization sites, in forward order.
std::vector<std::size_t> generator_sites(const ModelConfig& cfg);
std::vector<std::size_t> discriminator_sites(const ModelConfig& cfg);

/// U-net: stride-1 stem, `depth` stride-2 encoder stages, nearest-upsample
/// decoder stages with additive skips, 3x3 output conv. Convs feeding a
/// normalization carry no bias.
ParamGroup build_generator(const ModelConfig& cfg, Role role, std::uint64_t seed);

/// PatchGAN-style: stride-2 stem without normalization, depth-1 further
/// stride-2 stages, one stride-1 stage, 1-channel stride-1 score conv.
ParamGroup build_discriminator(const ModelConfig& cfg, Role role, std::uint64_t seed);

/// Two dense layers mapping a one-hot domain index to concatenated
/// [gamma for every site, beta for every site].
ParamGroup build_code_generator(std::span<const std::size_t> sites, std::size_t hidden,
                                Role role, std::uint64_t seed);

struct ParamCounts {
  std::vector<std::pair<Role, std::size_t>> per_group;
  std::size_t total = 0;
};

ParamCounts param_count(std::span<const ParamGroup> groups);

/// A ParamGroup registered on a tape. Entry names are qualified "<role>/<name>".
template <typename T>
struct BoundGroup {
  Role role = Role::G;
  std::vector<std::string> names;
  std::vector<Var> vars;

  Var at(std::string_view name) const;
};

template <typename T>
BoundGroup<T> bind(Tape<T>& tape, const ParamGroup& group, bool trainable);

/// Rebuilds bound groups over caller-supplied handles, consumed in
/// group/entry order.
template <typename T>
std::vector<BoundGroup<T>> bind_handles(std::span<const ParamGroup> layout,
                                        std::span<const Var> handles);

/// Per-site (gamma, beta) handles emitted by a code generator.
struct AdaInCode {
  std::vector<std::pair<Var, Var>> sites;
};

template <typename T>
AdaInCode emit_code(Tape<T>& tape, const BoundGroup<T>& code_gen,
                    std::span<const std::size_t> sites, int domain);

template <typename T>
Var forward_generator(Tape<T>& tape, const BoundGroup<T>& params, const ModelConfig& cfg,
                      Var input, const AdaInCode* code);

template <typename T>
Var forward_discriminator(Tape<T>& tape, const BoundGroup<T>& params, const ModelConfig& cfg,
                          Var input, const AdaInCode* code);

enum class Variant { standard, switchable };

std::string_view variant_name(Variant v);

/// Roles present for a variant, in canonical order.
std::vector<Role> roles_for(Variant v);

/// Everything a CycleGAN needs: configs plus parameter groups in
/// roles_for(variant) order.
struct CycleModels {
  Variant variant = Variant::standard;
  ModelConfig generator;
  ModelConfig discriminator;
  std::vector<ParamGroup> groups;

  const ParamGroup& group(Role role) const;
  ParamGroup& group(Role role);
};

/// Switchable builds force adain norm on both configs.
CycleModels build_cycle_models(Variant variant, ModelConfig generator, ModelConfig discriminator,
                               std::uint64_t seed);

/// The four translation/scoring functions of a CycleGAN on one tape.
/// For the switchable variant G = G_shared(., g(0)), F = G_shared(., g(1)),
/// D_X = D_shared(., d(0)), D_Y = D_shared(., d(1)).
template <typename T>
class CycleNetworks {
 public:
  CycleNetworks(Tape<T>& tape, const CycleModels& models, std::vector<BoundGroup<T>> bound);
  /// Binds every group; `trainable` decides which are tracked.
  CycleNetworks(Tape<T>& tape, const CycleModels& models,
                const std::function<bool(Role)>& trainable);

  Var to_x(Var y);   // G
  Var to_y(Var x);   // F
  Var score_x(Var v);  // D_X
  Var score_y(Var v);  // D_Y

 private:
  const BoundGroup<T>& bound(Role role) const;
  const AdaInCode& code(Role code_gen, int domain);

  Tape<T>& tape_;
  const CycleModels& models_;
  std::vector<BoundGroup<T>> bound_;
  std::array<std::optional<AdaInCode>, 4> codes_;
};

/// Converts a tape gradient list (registration order) back into groups
/// shaped like `layout`.
template <typename T>
std::vector<ParamGroup> gradients_to_groups(std::span<const ParamGroup> layout,
                                            std::span<const BasicNamedTensor<T>> grads);

/// All entries of `groups` as double tensors, names qualified like bind().
std::vector<BasicNamedTensor<double>> flatten_to_double(std::span<const ParamGroup> groups);

}  // namespace fedcyc
