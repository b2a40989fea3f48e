#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcyc/tensor.hpp"

namespace fedcyc {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEpsilon = 1e-5;

enum class OpKind : std::uint8_t {
  parameter,
  constant,
  dense,
  conv2d,
  leaky_relu,
  instance_norm,
  adain,
  upsample_nearest,
  add,
  sub,
  scalar_mul,
  mean,
  abs_mean,
  square_mean,
  sigmoid,
  softplus,
  tanh,
  slice,
};

std::string_view op_name(OpKind kind);

/// Differentiable ops, excluding the two leaf kinds.
std::span<const OpKind> differentiable_ops();

struct OpAttrs {
  std::size_t stride = 1;
  double slope = kLeakySlope;
  double epsilon = kNormEpsilon;
  double scalar = 1.0;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Scales the gradient contributions of one op kind during backward.
/// Used by gradient-check negative controls.
struct FaultInjection {
  OpKind kind;
  double scale;
};

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Node ids are assigned in creation order, so every input id is smaller
/// than its consumer's id and backward is a single descending sweep.
/// A tape is single-owner; backward consumes it.
template <typename T>
class Tape {
 public:
  /// Tracked leaf; its gradient appears in backward()'s result under `name`.
  Var parameter(std::string name, BasicTensor<T> value);
  /// Untracked leaf.
  Var constant(BasicTensor<T> value);

  /// Runs op `kind` forward. The node requires grad iff any input does.
  Var record(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});
  Var record(OpKind kind, std::initializer_list<Var> inputs, const OpAttrs& attrs = {}) {
    return record(kind, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
  }

  const BasicTensor<T>& value(Var v) const;
  bool tracked(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient of the scalar `loss` w.r.t. every parameter, in registration
  /// order. Parameters the loss does not depend on get zeros.
  std::vector<BasicNamedTensor<T>> backward(Var loss);

  void inject_fault(FaultInjection fault) { fault_ = fault; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    OpAttrs attrs;
    BasicTensor<T> value;
    std::vector<T> saved;
    bool requires_grad = false;
    std::string name;
  };

  const Node& node(Var v) const;
  void require_open() const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> parameters_;
  std::optional<FaultInjection> fault_;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

/// Typed wrappers over Tape::record for the op catalog.
namespace ops {

/// x [N,in], w [out,in], b [out] -> [N,out]
template <typename T>
Var dense(Tape<T>& t, Var x, Var w, Var b) {
  return t.record(OpKind::dense, {x, w, b});
}

/// 3x3 kernel, zero padding 1. x [N,C,H,W], w [O,C,3,3], optional b [O].
template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, std::size_t stride) {
  OpAttrs a;
  a.stride = stride;
  return t.record(OpKind::conv2d, {x, w}, a);
}

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, std::size_t stride) {
  OpAttrs a;
  a.stride = stride;
  return t.record(OpKind::conv2d, {x, w, b}, a);
}

template <typename T>
Var leaky_relu(Tape<T>& t, Var x, double slope = kLeakySlope) {
  OpAttrs a;
  a.slope = slope;
  return t.record(OpKind::leaky_relu, {x}, a);
}

template <typename T>
Var instance_norm(Tape<T>& t, Var x, double eps = kNormEpsilon) {
  OpAttrs a;
  a.epsilon = eps;
  return t.record(OpKind::instance_norm, {x}, a);
}

/// gamma * instance_norm(x) + beta with per-channel gamma [C], beta [C].
template <typename T>
Var adain(Tape<T>& t, Var x, Var gamma, Var beta, double eps = kNormEpsilon) {
  OpAttrs a;
  a.epsilon = eps;
  return t.record(OpKind::adain, {x, gamma, beta}, a);
}

template <typename T>
Var upsample_nearest(Tape<T>& t, Var x) {
  return t.record(OpKind::upsample_nearest, {x});
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  return t.record(OpKind::add, {a, b});
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  return t.record(OpKind::sub, {a, b});
}

template <typename T>
Var scalar_mul(Tape<T>& t, Var x, double s) {
  OpAttrs a;
  a.scalar = s;
  return t.record(OpKind::scalar_mul, {x}, a);
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  return t.record(OpKind::mean, {x});
}

template <typename T>
Var abs_mean(Tape<T>& t, Var x) {
  return t.record(OpKind::abs_mean, {x});
}

template <typename T>
Var square_mean(Tape<T>& t, Var x) {
  return t.record(OpKind::square_mean, {x});
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  return t.record(OpKind::sigmoid, {x});
}

/// log(1 + exp(x)), computed stably.
template <typename T>
Var softplus(Tape<T>& t, Var x) {
  return t.record(OpKind::softplus, {x});
}

template <typename T>
Var tanh(Tape<T>& t, Var x) {
  return t.record(OpKind::tanh, {x});
}

/// Flat range [offset, offset+length) of x as a 1-D tensor.
template <typename T>
Var slice(Tape<T>& t, Var x, std::size_t offset, std::size_t length) {
  OpAttrs a;
  a.offset = offset;
  a.length = length;
  return t.record(OpKind::slice, {x}, a);
}

}  // namespace ops
}  // namespace fedcyc
