#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/image_ops.h"
#include "srhand/tensor.h"

namespace srhand::nn {

// Named parameter registry. std::map keeps iteration order deterministic,
// which checkpointing and the optimizer rely on. Entries in `aux` are state
// that is persisted but never optimized (e.g. power-iteration vectors).
template <typename S>
struct Params {
  std::map<std::string, Tensor<S>> values;
  std::set<std::string> aux;

  Tensor<S>& add(const std::string& name, Shape shape) {
    auto [it, fresh] = values.emplace(name, Tensor<S>::zeros(shape));
    if (!fresh) throw ConfigError("duplicate parameter name: " + name);
    return it->second;
  }

  Tensor<S>& add_aux(const std::string& name, Shape shape) {
    aux.insert(name);
    return add(name, shape);
  }

  Tensor<S>& at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  bool same_values(const Params& other) const {
    if (values.size() != other.values.size()) return false;
    auto a = values.begin();
    auto b = other.values.begin();
    for (; a != values.end(); ++a, ++b) {
      if (a->first != b->first) return false;
      if (a->second.shape != b->second.shape) return false;
      if (a->second.data != b->second.data) return false;
    }
    return true;
  }
};

// Tape handles for one forward pass. Trainable binds make leaves that collect
// gradients; frozen binds make constants (no graph growth past them).
template <typename S>
struct Bound {
  Tape<S>* tape = nullptr;
  std::map<std::string, Var<S>> vars;

  Var<S> operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("parameter not bound: " + name);
    return it->second;
  }
};

template <typename S>
Bound<S> bind(Tape<S>& tape, const Params<S>& params, bool trainable) {
  Bound<S> b;
  b.tape = &tape;
  for (const auto& [name, value] : params.values) {
    bool rq = trainable && !params.aux.count(name);
    b.vars.emplace(name, make_leaf(tape, value, rq));
  }
  return b;
}

// Only parameters whose name starts with `prefix` are trainable.
template <typename S>
Bound<S> bind_prefix(Tape<S>& tape, const Params<S>& params, const std::string& prefix) {
  Bound<S> b;
  b.tape = &tape;
  for (const auto& [name, value] : params.values) {
    bool rq = name.rfind(prefix, 0) == 0 && !params.aux.count(name);
    b.vars.emplace(name, make_leaf(tape, value, rq));
  }
  return b;
}

template <typename S>
struct Adam {
  S lr;
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  long t = 0;
  std::map<std::string, Tensor<S>> m, v;

  explicit Adam(S lr_) : lr(lr_) {}

  // Applies one update from explicit per-parameter gradients.
  void step_grads(Params<S>& params, const std::map<std::string, Tensor<S>>& grads) {
    ++t;
    S c1 = S(1) - std::pow(beta1, static_cast<S>(t));
    S c2 = S(1) - std::pow(beta2, static_cast<S>(t));
    for (auto& [name, value] : params.values) {
      if (params.aux.count(name)) continue;
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor<S>& g = it->second;
      Tensor<S>& mi = m.try_emplace(name, Tensor<S>::zeros(value.shape)).first->second;
      Tensor<S>& vi = v.try_emplace(name, Tensor<S>::zeros(value.shape)).first->second;
      mi.data = beta1 * mi.data + (S(1) - beta1) * g.data;
      vi.data = beta2 * vi.data.array() + (S(1) - beta2) * g.data.array().square();
      value.data.array() -=
          lr * (mi.data.array() / c1) / ((vi.data.array() / c2).sqrt() + eps);
    }
  }

  // Applies one update from the gradients accumulated on `bound`'s tape.
  // Parameters without gradient (never touched by the loss) are left alone.
  void step(Params<S>& params, const Bound<S>& bound) {
    std::map<std::string, Tensor<S>> grads;
    collect_grads(bound, grads);
    step_grads(params, grads);
  }

  // Adds `bound`'s tape gradients into `out` (creating entries as needed) so
  // several small tapes can feed one optimizer step.
  static void collect_grads(const Bound<S>& bound,
                            std::map<std::string, Tensor<S>>& out) {
    for (const auto& [name, var] : bound.vars) {
      if (!var.requires_grad()) continue;
      typename Tape<S>::Node& node = var.tape->node(var.id);
      if (node.grad.size() == 0) continue;
      auto [it, fresh] =
          out.try_emplace(name, Tensor<S>::zeros(node.value.shape));
      it->second.data += node.grad.data;
      (void)fresh;
    }
  }
};

// ---------------------------------------------------------------------------
// Layers. A layer is a small descriptor; weights live in Params under
// "<name>.w" / "<name>.b". Initialization is uniform in +-1/sqrt(fan_in).
// ---------------------------------------------------------------------------

template <typename S>
void init_fan_in(Tensor<S>& w, Index fan_in, Rng& rng) {
  S lim = S(1) / std::sqrt(static_cast<S>(fan_in));
  for (Index i = 0; i < w.size(); ++i) w.data[i] = rng.uniform(-lim, lim);
}

template <typename S>
struct Linear {
  std::string name;
  Index in = 0, out = 0;

  void init(Params<S>& p, Rng& rng) const {
    init_fan_in(p.add(name + ".w", {out, in}), in, rng);
    init_fan_in(p.add(name + ".b", {out}), in, rng);
  }
  Var<S> operator()(const Bound<S>& b, Var<S> x) const {
    return linear(b[name + ".w"], x, b[name + ".b"]);
  }
};

template <typename S>
struct Conv {
  std::string name;
  Index cin = 0, cout = 0, k = 3;

  void init(Params<S>& p, Rng& rng) const {
    init_fan_in(p.add(name + ".w", {cout, cin * k * k}), cin * k * k, rng);
    init_fan_in(p.add(name + ".b", {cout}), cin * k * k, rng);
  }
  Var<S> operator()(const Bound<S>& b, Var<S> x) const {
    return conv2d(x, b[name + ".w"], b[name + ".b"], k, k / 2);
  }
};

// Fully connected stack, ReLU between layers, linear output.
template <typename S>
struct Mlp {
  std::string name;
  std::vector<Index> dims;  // in, hidden..., out

  void init(Params<S>& p, Rng& rng) const {
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      Linear<S>{layer_name(i), dims[i], dims[i + 1]}.init(p, rng);
  }
  Var<S> operator()(const Bound<S>& b, Var<S> x) const {
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      x = Linear<S>{layer_name(i), dims[i], dims[i + 1]}(b, x);
      if (i + 2 < dims.size()) x = relu(x);
    }
    return x;
  }
  std::string layer_name(std::size_t i) const { return name + ".fc" + std::to_string(i); }
};

// ---------------------------------------------------------------------------
// Spectral normalization: one power-iteration step per forward. The estimated
// singular value enters the graph as a constant, so gradients see W/sigma
// with sigma fixed. u persists in Params as aux state.
// ---------------------------------------------------------------------------

template <typename S>
struct SpectralConv {
  std::string name;
  Index cin = 0, cout = 0, k = 3;

  void init(Params<S>& p, Rng& rng) const {
    init_fan_in(p.add(name + ".w", {cout, cin * k * k}), cin * k * k, rng);
    init_fan_in(p.add(name + ".b", {cout}), cin * k * k, rng);
    Tensor<S>& u = p.add_aux(name + ".u", {cout});
    for (Index i = 0; i < cout; ++i) u.data[i] = rng.normal();
    u.data.normalize();
  }

  // update_u mutates the power-iteration state; pass false when the network
  // must stay bit-identical (frozen discriminator during fine-tuning).
  Var<S> operator()(Params<S>& p, const Bound<S>& b, Var<S> x, bool update_u) const {
    const Tensor<S>& W = p.at(name + ".w");
    Tensor<S>& u = p.at(name + ".u");
    auto Wm = W.mat(cout, cin * k * k);
    Eigen::Matrix<S, Eigen::Dynamic, 1> v = (Wm.transpose() * u.data).normalized();
    Eigen::Matrix<S, Eigen::Dynamic, 1> u2 = (Wm * v).normalized();
    S sigma = u2.dot(Wm * v);
    if (update_u) u.data = u2;
    Var<S> w_sn = scale(b[name + ".w"], S(1) / std::max(sigma, S(1e-12)));
    return conv2d(x, w_sn, b[name + ".b"], k, k / 2);
  }
};

// Largest singular value, for tests.
template <typename S>
S spectral_norm_exact(const Tensor<S>& w, Index rows, Index cols) {
  Eigen::JacobiSVD<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> svd(w.mat(rows, cols));
  return svd.singularValues()(0);
}

}  // namespace srhand::nn
