#include "fedcyc/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fedcyc {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::parameter: return "parameter";
    case OpKind::constant: return "constant";
    case OpKind::dense: return "dense";
    case OpKind::conv2d: return "conv2d";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::instance_norm: return "instance_norm";
    case OpKind::adain: return "adain";
    case OpKind::upsample_nearest: return "upsample_nearest";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::mean: return "mean";
    case OpKind::abs_mean: return "abs_mean";
    case OpKind::square_mean: return "square_mean";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softplus: return "softplus";
    case OpKind::tanh: return "tanh";
    case OpKind::slice: return "slice";
  }
  return "unknown";
}

std::span<const OpKind> differentiable_ops() {
  static constexpr std::array kOps{
      OpKind::dense,     OpKind::conv2d,     OpKind::leaky_relu,  OpKind::instance_norm,
      OpKind::adain,     OpKind::upsample_nearest, OpKind::add,   OpKind::sub,
      OpKind::scalar_mul, OpKind::mean,      OpKind::abs_mean,    OpKind::square_mean,
      OpKind::sigmoid,   OpKind::softplus,   OpKind::tanh,        OpKind::slice,
  };
  return kOps;
}

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

std::size_t expected_arity(OpKind kind) {
  switch (kind) {
    case OpKind::dense:
    case OpKind::adain: return 3;
    case OpKind::add:
    case OpKind::sub: return 2;
    case OpKind::conv2d: return 0;  // 2 or 3, checked separately
    default: return 1;
  }
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_value(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

struct Conv {
  std::size_t n, c, h, w, o, ho, wo, stride;
};

template <typename T>
Conv conv_geometry(OpKind kind, const BasicTensor<T>& x, const BasicTensor<T>& w,
                   const BasicTensor<T>* b, std::size_t stride) {
  if (stride != 1 && stride != 2) shape_fail(kind, "stride must be 1 or 2");
  if (x.rank() != 4) shape_fail(kind, "input must be rank 4, got " + shape_string(x.shape()));
  if (w.rank() != 4 || w.extent(2) != 3 || w.extent(3) != 3 || w.extent(1) != x.extent(1)) {
    shape_fail(kind, "kernel " + shape_string(w.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  if (b && (b->rank() != 1 || b->extent(0) != w.extent(0))) {
    shape_fail(kind, "bias " + shape_string(b->shape()) + " does not match kernel");
  }
  Conv g{x.extent(0), x.extent(1), x.extent(2), x.extent(3), w.extent(0), 0, 0, stride};
  g.ho = (g.h - 1) / stride + 1;
  g.wo = (g.w - 1) / stride + 1;
  return g;
}

template <typename T>
void conv_forward(const Conv& g, const T* x, const T* w, const T* b, T* y) {
  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.ho * g.wo;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      T* out = y + (n * g.o + o) * out_plane;
      std::fill(out, out + out_plane, b ? b[o] : T(0));
      for (std::size_t c = 0; c < g.c; ++c) {
        const T* in = x + (n * g.c + c) * in_plane;
        const T* k = w + (o * g.c + c) * 9;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const T wv = k[kh * 3 + kw];
            for (std::size_t oh = 0; oh < g.ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - 1;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const T* row = in + ih * g.w;
              T* orow = out + oh * g.wo;
              for (std::size_t ow = 0; ow < g.wo; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - 1;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                orow[ow] += wv * row[iw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const Conv& g, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.ho * g.wo;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const T* go = gy + (n * g.o + o) * out_plane;
      if (gb) {
        T s = T(0);
        for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
        gb[o] += s;
      }
      for (std::size_t c = 0; c < g.c; ++c) {
        const T* in = x + (n * g.c + c) * in_plane;
        T* gin = gx ? gx + (n * g.c + c) * in_plane : nullptr;
        const T* k = w + (o * g.c + c) * 9;
        T* gk = gw ? gw + (o * g.c + c) * 9 : nullptr;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const T wv = k[kh * 3 + kw];
            T acc = T(0);
            for (std::size_t oh = 0; oh < g.ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - 1;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const T* row = in + ih * g.w;
              const T* grow = go + oh * g.wo;
              for (std::size_t ow = 0; ow < g.wo; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - 1;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                acc += grow[ow] * row[iw];
                if (gin) gin[ih * g.w + iw] += wv * grow[ow];
              }
            }
            if (gk) gk[kh * 3 + kw] += acc;
          }
        }
      }
    }
  }
}

/// Normalizes each (n, c) plane; writes x_hat and per-plane 1/sigma.
template <typename T>
void normalize_planes(const T* x, std::size_t planes, std::size_t plane, double eps, T* x_hat,
                      T* inv_std) {
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x + p * plane;
    T mu = T(0);
    for (std::size_t i = 0; i < plane; ++i) mu += in[i];
    mu /= static_cast<T>(plane);
    T var = T(0);
    for (std::size_t i = 0; i < plane; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<T>(plane);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[p] = inv;
    T* out = x_hat + p * plane;
    for (std::size_t i = 0; i < plane; ++i) out[i] = (in[i] - mu) * inv;
  }
}

/// d/dx of x_hat given upstream gradient w.r.t. x_hat, per plane.
template <typename T>
void normalize_backward(const T* g_hat, const T* x_hat, const T* inv_std, std::size_t planes,
                        std::size_t plane, T* gx) {
  const T count = static_cast<T>(plane);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = g_hat + p * plane;
    const T* y = x_hat + p * plane;
    T gm = T(0), gym = T(0);
    for (std::size_t i = 0; i < plane; ++i) {
      gm += g[i];
      gym += g[i] * y[i];
    }
    gm /= count;
    gym /= count;
    T* out = gx + p * plane;
    for (std::size_t i = 0; i < plane; ++i) out[i] = inv_std[p] * (g[i] - gm - y[i] * gym);
  }
}

void check_plane_input(OpKind kind, const Shape& s) {
  if (s.size() != 4) shape_fail(kind, "input must be rank 4, got " + shape_string(s));
}

}  // namespace

template <typename T>
Var Tape<T>::parameter(std::string name, BasicTensor<T> value) {
  require_open();
  Node n{OpKind::parameter, {}, {}, std::move(value), {}, true, std::move(name)};
  nodes_.push_back(std::move(n));
  parameters_.push_back(nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(BasicTensor<T> value) {
  require_open();
  Node n{OpKind::constant, {}, {}, std::move(value), {}, false, {}};
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw TapeError("variable is not on this tape");
  return nodes_[v.id];
}

template <typename T>
void Tape<T>::require_open() const {
  if (consumed_) throw TapeError("tape already consumed by backward()");
}

template <typename T>
const BasicTensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
bool Tape<T>::tracked(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
Var Tape<T>::record(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  require_open();
  if (kind == OpKind::parameter || kind == OpKind::constant ||
      static_cast<std::uint8_t>(kind) > static_cast<std::uint8_t>(OpKind::slice)) {
    throw TapeError("record: unknown op kind " + std::to_string(static_cast<int>(kind)));
  }
  const std::size_t arity = expected_arity(kind);
  if (kind == OpKind::conv2d) {
    if (inputs.size() != 2 && inputs.size() != 3) shape_fail(kind, "expects 2 or 3 inputs");
  } else if (inputs.size() != arity) {
    shape_fail(kind, "expects " + std::to_string(arity) + " inputs, got " +
                         std::to_string(inputs.size()));
  }

  std::vector<const BasicTensor<T>*> in;
  bool requires_grad = false;
  std::vector<std::size_t> ids;
  for (Var v : inputs) {
    const Node& n = node(v);
    in.push_back(&n.value);
    requires_grad = requires_grad || n.requires_grad;
    ids.push_back(v.id);
  }

  std::vector<T> saved;
  Shape out_shape;
  std::vector<T> out;
  const BasicTensor<T>& x = *in[0];
  auto xd = x.data();

  switch (kind) {
    case OpKind::dense: {
      const auto &w = *in[1], &b = *in[2];
      if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || w.extent(1) != x.extent(1) ||
          b.extent(0) != w.extent(0)) {
        shape_fail(kind, "x " + shape_string(x.shape()) + ", w " + shape_string(w.shape()) +
                             ", b " + shape_string(b.shape()));
      }
      const std::size_t n = x.extent(0), fin = x.extent(1), fout = w.extent(0);
      out_shape = {n, fout};
      out.assign(n * fout, T(0));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < fout; ++j) {
          T acc = b[j];
          for (std::size_t k = 0; k < fin; ++k) acc += x[i * fin + k] * w[j * fin + k];
          out[i * fout + j] = acc;
        }
      }
      break;
    }
    case OpKind::conv2d: {
      const BasicTensor<T>* b = in.size() == 3 ? in[2] : nullptr;
      Conv g = conv_geometry(kind, x, *in[1], b, attrs.stride);
      out_shape = {g.n, g.o, g.ho, g.wo};
      out.assign(element_count(out_shape), T(0));
      conv_forward(g, xd.data(), in[1]->data().data(), b ? b->data().data() : nullptr,
                   out.data());
      break;
    }
    case OpKind::leaky_relu: {
      out_shape = x.shape();
      out.resize(x.size());
      const T slope = static_cast<T>(attrs.slope);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : slope * xd[i];
      break;
    }
    case OpKind::instance_norm: {
      check_plane_input(kind, x.shape());
      out_shape = x.shape();
      out.resize(x.size());
      const std::size_t planes = x.extent(0) * x.extent(1), plane = x.extent(2) * x.extent(3);
      saved.resize(planes);
      normalize_planes(xd.data(), planes, plane, attrs.epsilon, out.data(), saved.data());
      break;
    }
    case OpKind::adain: {
      check_plane_input(kind, x.shape());
      const auto &gamma = *in[1], &beta = *in[2];
      const std::size_t c = x.extent(1);
      if (gamma.rank() != 1 || beta.rank() != 1 || gamma.extent(0) != c || beta.extent(0) != c) {
        shape_fail(kind, "code vectors " + shape_string(gamma.shape()) + "/" +
                             shape_string(beta.shape()) + " do not match " +
                             std::to_string(c) + " channels");
      }
      out_shape = x.shape();
      const std::size_t planes = x.extent(0) * c, plane = x.extent(2) * x.extent(3);
      // saved layout: x_hat (planes*plane) then inv_std (planes)
      saved.resize(x.size() + planes);
      normalize_planes(xd.data(), planes, plane, attrs.epsilon, saved.data(),
                       saved.data() + x.size());
      out.resize(x.size());
      for (std::size_t p = 0; p < planes; ++p) {
        const T gm = gamma[p % c], bt = beta[p % c];
        for (std::size_t i = 0; i < plane; ++i) {
          out[p * plane + i] = gm * saved[p * plane + i] + bt;
        }
      }
      break;
    }
    case OpKind::upsample_nearest: {
      check_plane_input(kind, x.shape());
      const std::size_t planes = x.extent(0) * x.extent(1), h = x.extent(2), w = x.extent(3);
      out_shape = {x.extent(0), x.extent(1), 2 * h, 2 * w};
      out.resize(planes * 4 * h * w);
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < 2 * h; ++i) {
          for (std::size_t j = 0; j < 2 * w; ++j) {
            out[(p * 2 * h + i) * 2 * w + j] = xd[(p * h + i / 2) * w + j / 2];
          }
        }
      }
      break;
    }
    case OpKind::add:
    case OpKind::sub: {
      const auto& y = *in[1];
      if (x.shape() != y.shape()) {
        shape_fail(kind, shape_string(x.shape()) + " vs " + shape_string(y.shape()));
      }
      out_shape = x.shape();
      out.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = kind == OpKind::add ? xd[i] + y[i] : xd[i] - y[i];
      }
      break;
    }
    case OpKind::scalar_mul: {
      out_shape = x.shape();
      out.resize(x.size());
      const T s = static_cast<T>(attrs.scalar);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * xd[i];
      break;
    }
    case OpKind::mean:
    case OpKind::abs_mean:
    case OpKind::square_mean: {
      T acc = T(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = xd[i];
        acc += kind == OpKind::mean ? v : kind == OpKind::abs_mean ? std::abs(v) : v * v;
      }
      out_shape = {1};
      out = {acc / static_cast<T>(x.size())};
      break;
    }
    case OpKind::sigmoid:
    case OpKind::softplus:
    case OpKind::tanh: {
      out_shape = x.shape();
      out.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = kind == OpKind::sigmoid    ? sigmoid_value(xd[i])
                 : kind == OpKind::softplus ? softplus_value(xd[i])
                                            : std::tanh(xd[i]);
      }
      break;
    }
    case OpKind::slice: {
      if (attrs.length == 0 || attrs.offset + attrs.length > x.size()) {
        shape_fail(kind, "range [" + std::to_string(attrs.offset) + ", +" +
                             std::to_string(attrs.length) + ") outside " +
                             std::to_string(x.size()) + " elements");
      }
      out_shape = {attrs.length};
      out.assign(xd.begin() + attrs.offset, xd.begin() + attrs.offset + attrs.length);
      break;
    }
    default:
      throw TapeError("record: unknown op kind");
  }

  require_finite<T>(out, std::string(op_name(kind)) + " output");
  Node n{kind, std::move(ids), attrs, BasicTensor<T>(std::move(out_shape), std::move(out)),
         std::move(saved), requires_grad, {}};
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
std::vector<BasicNamedTensor<T>> Tape<T>::backward(Var loss) {
  require_open();
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw TapeError("backward: loss must be scalar, got " + shape_string(root.value.shape()));
  }
  if (!root.requires_grad) throw TapeError("backward: loss does not depend on any parameter");
  consumed_ = true;

  std::vector<std::vector<T>> grads(nodes_.size());
  grads[loss.id] = {T(1)};

  auto accumulate = [&](std::size_t id, std::vector<T>&& contribution, double scale) {
    if (!nodes_[id].requires_grad) return;
    if (scale != 1.0) {
      for (auto& v : contribution) v *= static_cast<T>(scale);
    }
    auto& slot = grads[id];
    if (slot.empty()) {
      slot = std::move(contribution);
    } else {
      for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += contribution[i];
    }
  };

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& nd = nodes_[id];
    if (!nd.requires_grad || grads[id].empty()) continue;
    if (nd.kind == OpKind::parameter || nd.kind == OpKind::constant) continue;

    const std::vector<T>& g = grads[id];
    const double scale = fault_ && fault_->kind == nd.kind ? fault_->scale : 1.0;
    auto needs = [&](std::size_t k) { return nodes_[nd.inputs[k]].requires_grad; };
    auto input = [&](std::size_t k) -> const BasicTensor<T>& { return nodes_[nd.inputs[k]].value; };
    const BasicTensor<T>& x = input(0);
    auto xd = x.data();

    switch (nd.kind) {
      case OpKind::dense: {
        const auto& w = input(1);
        const std::size_t n = x.extent(0), fin = x.extent(1), fout = w.extent(0);
        if (needs(0)) {
          std::vector<T> gx(n * fin, T(0));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < fout; ++j)
              for (std::size_t k = 0; k < fin; ++k) gx[i * fin + k] += g[i * fout + j] * w[j * fin + k];
          accumulate(nd.inputs[0], std::move(gx), scale);
        }
        if (needs(1)) {
          std::vector<T> gw(fout * fin, T(0));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < fout; ++j)
              for (std::size_t k = 0; k < fin; ++k) gw[j * fin + k] += g[i * fout + j] * xd[i * fin + k];
          accumulate(nd.inputs[1], std::move(gw), scale);
        }
        if (needs(2)) {
          std::vector<T> gb(fout, T(0));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < fout; ++j) gb[j] += g[i * fout + j];
          accumulate(nd.inputs[2], std::move(gb), scale);
        }
        break;
      }
      case OpKind::conv2d: {
        const auto& w = input(1);
        const bool has_bias = nd.inputs.size() == 3;
        Conv geo = conv_geometry(nd.kind, x, w, has_bias ? &input(2) : nullptr, nd.attrs.stride);
        std::vector<T> gx, gw, gb;
        if (needs(0)) gx.assign(x.size(), T(0));
        if (needs(1)) gw.assign(w.size(), T(0));
        if (has_bias && needs(2)) gb.assign(w.extent(0), T(0));
        conv_backward(geo, xd.data(), w.data().data(), g.data(), gx.empty() ? nullptr : gx.data(),
                      gw.empty() ? nullptr : gw.data(), gb.empty() ? nullptr : gb.data());
        if (!gx.empty()) accumulate(nd.inputs[0], std::move(gx), scale);
        if (!gw.empty()) accumulate(nd.inputs[1], std::move(gw), scale);
        if (!gb.empty()) accumulate(nd.inputs[2], std::move(gb), scale);
        break;
      }
      case OpKind::leaky_relu: {
        std::vector<T> gx(x.size());
        const T slope = static_cast<T>(nd.attrs.slope);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = xd[i] > T(0) ? g[i] : slope * g[i];
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      case OpKind::instance_norm: {
        const std::size_t planes = x.extent(0) * x.extent(1), plane = x.extent(2) * x.extent(3);
        std::vector<T> gx(x.size());
        normalize_backward(g.data(), nd.value.data().data(), nd.saved.data(), planes, plane,
                           gx.data());
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      case OpKind::adain: {
        const auto& gamma = input(1);
        const std::size_t c = x.extent(1), planes = x.extent(0) * c,
                          plane = x.extent(2) * x.extent(3);
        const T* x_hat = nd.saved.data();
        const T* inv_std = nd.saved.data() + x.size();
        if (needs(1) || needs(2)) {
          std::vector<T> gg(c, T(0)), gb(c, T(0));
          for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t i = 0; i < plane; ++i) {
              gg[p % c] += g[p * plane + i] * x_hat[p * plane + i];
              gb[p % c] += g[p * plane + i];
            }
          }
          if (needs(1)) accumulate(nd.inputs[1], std::move(gg), scale);
          if (needs(2)) accumulate(nd.inputs[2], std::move(gb), scale);
        }
        if (needs(0)) {
          std::vector<T> g_hat(x.size()), gx(x.size());
          for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < plane; ++i) g_hat[p * plane + i] = g[p * plane + i] * gamma[p % c];
          normalize_backward(g_hat.data(), x_hat, inv_std, planes, plane, gx.data());
          accumulate(nd.inputs[0], std::move(gx), scale);
        }
        break;
      }
      case OpKind::upsample_nearest: {
        const std::size_t planes = x.extent(0) * x.extent(1), h = x.extent(2), w = x.extent(3);
        std::vector<T> gx(x.size(), T(0));
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j)
              gx[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      case OpKind::add:
      case OpKind::sub: {
        if (needs(0)) accumulate(nd.inputs[0], std::vector<T>(g), scale);
        if (needs(1)) {
          std::vector<T> gy(g);
          if (nd.kind == OpKind::sub) {
            for (auto& v : gy) v = -v;
          }
          accumulate(nd.inputs[1], std::move(gy), scale);
        }
        break;
      }
      case OpKind::scalar_mul: {
        std::vector<T> gx(g);
        const T s = static_cast<T>(nd.attrs.scalar);
        for (auto& v : gx) v *= s;
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      case OpKind::mean:
      case OpKind::abs_mean:
      case OpKind::square_mean: {
        const T base = g[0] / static_cast<T>(x.size());
        std::vector<T> gx(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const T v = xd[i];
          gx[i] = nd.kind == OpKind::mean       ? base
                  : nd.kind == OpKind::abs_mean ? (v > T(0) ? base : v < T(0) ? -base : T(0))
                                                : T(2) * v * base;
        }
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      case OpKind::sigmoid:
      case OpKind::softplus:
      case OpKind::tanh: {
        auto yd = nd.value.data();
        std::vector<T> gx(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          T d;
          if (nd.kind == OpKind::sigmoid) {
            d = yd[i] * (T(1) - yd[i]);
          } else if (nd.kind == OpKind::softplus) {
            d = sigmoid_value(xd[i]);
          } else {
            d = T(1) - yd[i] * yd[i];
          }
          gx[i] = g[i] * d;
        }
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      case OpKind::slice: {
        std::vector<T> gx(x.size(), T(0));
        std::copy(g.begin(), g.end(), gx.begin() + nd.attrs.offset);
        accumulate(nd.inputs[0], std::move(gx), scale);
        break;
      }
      default:
        throw TapeError("backward: unknown op kind");
    }
    // Intermediate gradients are no longer needed once propagated.
    if (nd.kind != OpKind::parameter) std::vector<T>().swap(grads[id]);
  }

  std::vector<BasicNamedTensor<T>> result;
  result.reserve(parameters_.size());
  for (std::size_t id : parameters_) {
    const Node& p = nodes_[id];
    if (grads[id].empty()) {
      result.push_back({p.name, BasicTensor<T>::zeros(p.value.shape())});
    } else {
      result.push_back({p.name, BasicTensor<T>(p.value.shape(), std::move(grads[id]))});
    }
  }
  return result;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace fedcyc
