#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "srhand/tensor.h"

namespace srhand {

// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
// tape backwards is a valid topological order. Values live on the tape; Var
// is a cheap handle. One tape per forward pass; tapes are not thread-safe,
// concurrent evaluation uses one tape per thread.
template <typename S>
class Tape {
 public:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on first touch
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> backward;  // null for leaves/constants
  };

  int push(Tensor<S> value, bool requires_grad, std::function<void(Tape&, Node&)> backward = {}) {
    nodes_.push_back(Node{std::move(value), Tensor<S>(), requires_grad, std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  Tensor<S>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  // Seeds d(root)/d(root) = 1 and propagates. root must be a scalar node.
  // Grads are zeroed first, so after the call grad(id) == d(root)/d(id)
  // regardless of earlier backward passes on this tape.
  void backward(int root) {
    for (auto& n : nodes_)
      if (n.grad.size() != 0) n.grad.data.setZero();
    grad(root).data.setConstant(S(1));
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.requires_grad && n.grad.size() != 0) n.backward(*this, n);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Tensor<S>& val() const { return tape->value(id); }
  const Shape& shape() const { return val().shape; }
  Index size() const { return val().size(); }
  bool requires_grad() const { return tape->node(id).requires_grad; }
};

template <typename S>
Var<S> make_leaf(Tape<S>& tape, Tensor<S> value, bool requires_grad = true) {
  return Var<S>{&tape, tape.push(std::move(value), requires_grad)};
}

template <typename S>
Var<S> make_const(Tape<S>& tape, Tensor<S> value) {
  return Var<S>{&tape, tape.push(std::move(value), false)};
}

namespace detail {

template <typename S>
bool any_grad(std::initializer_list<Var<S>> vars) {
  for (const auto& v : vars)
    if (v.requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  Tensor<S> out(a.val().shape);
  out.data = a.val().data + b.val().data;
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), detail::any_grad<S>({a, b}),
                  [ia, ib](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad) tp.grad(ia).data += n.grad.data;
                    if (tp.node(ib).requires_grad) tp.grad(ib).data += n.grad.data;
                  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  Tensor<S> out(a.val().shape);
  out.data = a.val().data - b.val().data;
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), detail::any_grad<S>({a, b}),
                  [ia, ib](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad) tp.grad(ia).data += n.grad.data;
                    if (tp.node(ib).requires_grad) tp.grad(ib).data -= n.grad.data;
                  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  Tensor<S> out(a.val().shape);
  out.data = a.val().data.cwiseProduct(b.val().data);
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), detail::any_grad<S>({a, b}),
                  [ia, ib](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad)
                      tp.grad(ia).data += n.grad.data.cwiseProduct(tp.value(ib).data);
                    if (tp.node(ib).requires_grad)
                      tp.grad(ib).data += n.grad.data.cwiseProduct(tp.value(ia).data);
                  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> scale(Var<S> a, S k) {
  Tape<S>& t = *a.tape;
  Tensor<S> out(a.val().shape);
  out.data = a.val().data * k;
  int ia = a.id;
  int id = t.push(std::move(out), a.requires_grad(),
                  [ia, k](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad) tp.grad(ia).data += n.grad.data * k;
                  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> add_scalar(Var<S> a, S k) {
  Tape<S>& t = *a.tape;
  Tensor<S> out(a.val().shape);
  out.data = a.val().data.array() + k;
  int ia = a.id;
  int id = t.push(std::move(out), a.requires_grad(),
                  [ia](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad) tp.grad(ia).data += n.grad.data;
                  });
  return Var<S>{&t, id};
}

namespace detail {

// Unary elementwise op: fwd(x) and dydx(x, y) as Eigen array expressions.
template <typename S, typename Fwd, typename Dydx>
Var<S> unary(Var<S> a, Fwd fwd, Dydx dydx) {
  Tape<S>& t = *a.tape;
  Tensor<S> out(a.val().shape);
  out.data = fwd(a.val().data.array()).matrix();
  int ia = a.id;
  int id = t.push(std::move(out), a.requires_grad(),
                  [ia, dydx](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ia).requires_grad) return;
                    tp.grad(ia).data.array() +=
                        n.grad.data.array() * dydx(tp.value(ia).data.array(), n.value.data.array());
                  });
  return Var<S>{&t, id};
}

}  // namespace detail

template <typename S>
Var<S> relu(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.max(S(0)); },
      [](auto x, auto) { return (x > S(0)).template cast<S>(); });
}

template <typename S>
Var<S> leaky_relu(Var<S> a, S slope = S(0.2)) {
  return detail::unary<S>(
      a, [slope](auto x) { return x.max(x * slope); },
      [slope](auto x, auto) { return (x > S(0)).template cast<S>() * (S(1) - slope) + slope; });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return S(1) / (S(1) + (-x).exp()); },
      [](auto, auto y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.tanh(); }, [](auto, auto y) { return S(1) - y * y; });
}

template <typename S>
Var<S> log_op(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.log(); }, [](auto x, auto) { return x.inverse(); });
}

template <typename S>
Var<S> abs_op(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.abs(); }, [](auto x, auto) { return x.sign(); });
}

template <typename S>
Var<S> square(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.square(); }, [](auto x, auto) { return S(2) * x; });
}

template <typename S>
Var<S> sqrt_op(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.sqrt(); }, [](auto, auto y) { return S(0.5) / y.max(S(1e-30)); });
}

template <typename S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

template <typename S>
Var<S> inv_op(Var<S> a) {
  return detail::unary<S>(
      a, [](auto x) { return x.inverse(); }, [](auto, auto y) { return -y * y; });
}

// Value copy with no gradient path.
template <typename S>
Var<S> detach(Var<S> a) {
  return make_const(*a.tape, a.val());
}

// Pass-through gradient inside [lo, hi], zero outside (subgradient).
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  return detail::unary<S>(
      a, [lo, hi](auto x) { return x.min(hi).max(lo); },
      [lo, hi](auto x, auto) { return (x >= lo && x <= hi).template cast<S>(); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> out = Tensor<S>::scalar(a.val().data.sum());
  int ia = a.id;
  int id = t.push(std::move(out), a.requires_grad(),
                  [ia](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad)
                      tp.grad(ia).data.array() += n.grad.data[0];
                  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> mean(Var<S> a) {
  S inv = S(1) / static_cast<S>(a.size());
  return scale(sum(a), inv);
}

// ---------------------------------------------------------------------------
// Structure: concat / slice / gather / broadcast
// ---------------------------------------------------------------------------

// Concatenate along the leading axis. For [F,N] feature matrices this stacks
// feature rows; for [C,H,W] grids it stacks channels. Trailing dims must match.
template <typename S>
Var<S> vcat(const std::vector<Var<S>>& parts) {
  Tape<S>& t = *parts.front().tape;
  Shape shape = parts.front().shape();
  Index lead = 0, block = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) block *= shape[i];
  for (const auto& p : parts) lead += p.shape()[0];
  shape[0] = lead;
  Tensor<S> out(shape);
  Index off = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    out.data.segment(off, p.size()) = p.val().data;
    off += p.size();
    rg = rg || p.requires_grad();
    ids.push_back(p.id);
    sizes.push_back(p.size());
  }
  (void)block;
  int id = t.push(std::move(out), rg, [ids, sizes](Tape<S>& tp, typename Tape<S>::Node& n) {
    Index off2 = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.node(ids[i]).requires_grad)
        tp.grad(ids[i]).data += n.grad.data.segment(off2, sizes[i]);
      off2 += sizes[i];
    }
  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> vcat(Var<S> a, Var<S> b) {
  return vcat<S>(std::vector<Var<S>>{a, b});
}

// Rows [r0, r1) of the leading axis.
template <typename S>
Var<S> slice_lead(Var<S> a, Index r0, Index r1) {
  Tape<S>& t = *a.tape;
  Shape shape = a.shape();
  Index block = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) block *= shape[i];
  shape[0] = r1 - r0;
  Tensor<S> out(shape);
  out.data = a.val().data.segment(r0 * block, (r1 - r0) * block);
  int ia = a.id;
  int id = t.push(std::move(out), a.requires_grad(),
                  [ia, r0, block](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ia).requires_grad)
                      tp.grad(ia).data.segment(r0 * block, n.grad.size()) += n.grad.data;
                  });
  return Var<S>{&t, id};
}

// a: [F,N] (rank-2 view), idx: column indices -> [F,Q].
template <typename S>
Var<S> gather_cols(Var<S> a, std::vector<Index> idx) {
  Tape<S>& t = *a.tape;
  Index F = a.shape()[0];
  Index N = a.size() / F;
  Index Q = static_cast<Index>(idx.size());
  Tensor<S> out({F, Q});
  auto A = a.val().mat(F, N);
  auto O = out.mat(F, Q);
  for (Index q = 0; q < Q; ++q) O.col(q) = A.col(idx[static_cast<std::size_t>(q)]);
  int ia = a.id;
  int id = t.push(std::move(out), a.requires_grad(),
                  [ia, idx = std::move(idx), F, N](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ia).requires_grad) return;
                    auto G = tp.grad(ia).mat(F, N);
                    auto NG = n.grad.mat(F, static_cast<Index>(idx.size()));
                    for (Index q = 0; q < NG.cols(); ++q)
                      G.col(idx[static_cast<std::size_t>(q)]) += NG.col(q);
                  });
  return Var<S>{&t, id};
}

// x: [F,N], w: [N] -> x with every row scaled elementwise by w.
template <typename S>
Var<S> mul_rowvec(Var<S> x, Var<S> w) {
  Tape<S>& t = *x.tape;
  Index F = x.shape()[0];
  Index N = x.size() / F;
  Tensor<S> out(x.shape());
  out.mat(F, N) = x.val().mat(F, N).array().rowwise() * w.val().data.transpose().array();
  int ix = x.id, iw = w.id;
  int id = t.push(std::move(out), detail::any_grad<S>({x, w}),
                  [ix, iw, F, N](Tape<S>& tp, typename Tape<S>::Node& n) {
                    auto NG = n.grad.mat(F, N);
                    if (tp.node(ix).requires_grad)
                      tp.grad(ix).mat(F, N).array() +=
                          NG.array().rowwise() * tp.value(iw).data.transpose().array();
                    if (tp.node(iw).requires_grad)
                      tp.grad(iw).data +=
                          (NG.array() * tp.value(ix).mat(F, N).array()).colwise().sum().matrix().transpose();
                  });
  return Var<S>{&t, id};
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// y = W x + b. x: [Fin,N], W: [Fout,Fin], b: [Fout] (optional id -1 semantics
// avoided: pass bias always).
template <typename S>
Var<S> linear(Var<S> W, Var<S> x, Var<S> b) {
  Tape<S>& t = *W.tape;
  Index Fout = W.shape()[0], Fin = W.shape()[1];
  Index N = x.size() / Fin;
  Tensor<S> out({Fout, N});
  out.mat(Fout, N) = W.val().as_matrix() * x.val().mat(Fin, N);
  out.mat(Fout, N).colwise() += b.val().data;
  int iw = W.id, ix = x.id, ib = b.id;
  int id = t.push(std::move(out), detail::any_grad<S>({W, x, b}),
                  [iw, ix, ib, Fout, Fin, N](Tape<S>& tp, typename Tape<S>::Node& n) {
                    auto G = n.grad.mat(Fout, N);
                    if (tp.node(iw).requires_grad)
                      tp.grad(iw).as_matrix() += G * tp.value(ix).mat(Fin, N).transpose();
                    if (tp.node(ix).requires_grad)
                      tp.grad(ix).mat(Fin, N) += tp.value(iw).as_matrix().transpose() * G;
                    if (tp.node(ib).requires_grad) tp.grad(ib).data += G.rowwise().sum();
                  });
  return Var<S>{&t, id};
}

// Row-wise normalization of nonnegative rows: y_r = x_r / sum(x_r), with a
// constant fallback row where the sum is below eps (no gradient there).
template <typename S>
Var<S> row_normalize(Var<S> x, const Tensor<S>& fallback, S eps = S(1e-12)) {
  Tape<S>& t = *x.tape;
  Index R = x.shape()[0], C = x.shape()[1];
  Tensor<S> out({R, C});
  auto X = x.val().as_matrix();
  auto O = out.as_matrix();
  auto FB = fallback.mat(R, C);
  std::vector<char> live(static_cast<std::size_t>(R));
  for (Index r = 0; r < R; ++r) {
    S s = X.row(r).sum();
    if (s > eps) {
      O.row(r) = X.row(r) / s;
      live[static_cast<std::size_t>(r)] = 1;
    } else {
      O.row(r) = FB.row(r);
    }
  }
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, R, C, live = std::move(live)](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    auto X2 = tp.value(ix).mat(R, C);
                    auto Y = n.value.mat(R, C);
                    auto G = n.grad.mat(R, C);
                    auto GX = tp.grad(ix).mat(R, C);
                    for (Index r = 0; r < R; ++r) {
                      if (!live[static_cast<std::size_t>(r)]) continue;
                      S s = X2.row(r).sum();
                      S dot = G.row(r).dot(Y.row(r));
                      GX.row(r) += (G.row(r).array() - dot).matrix() / s;
                    }
                  });
  return Var<S>{&t, id};
}

// Same data, new shape (sizes must match).
template <typename S>
Var<S> reshape_op(Var<S> x, Shape shape) {
  Tape<S>& t = *x.tape;
  Tensor<S> out = x.val().reshaped(shape);
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (tp.node(ix).requires_grad) tp.grad(ix).data += n.grad.data;
                  });
  return Var<S>{&t, id};
}

// [R,C] -> [C,R].
template <typename S>
Var<S> transpose_op(Var<S> x) {
  Tape<S>& t = *x.tape;
  Index R = x.shape()[0], C = x.size() / x.shape()[0];
  Tensor<S> out({C, R});
  out.mat(C, R) = x.val().mat(R, C).transpose();
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, R, C](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    tp.grad(ix).mat(R, C) += n.grad.mat(C, R).transpose();
                  });
  return Var<S>{&t, id};
}

// [R,C] -> [R,1], summing each row.
template <typename S>
Var<S> rowsum(Var<S> x) {
  Tape<S>& t = *x.tape;
  Index R = x.shape()[0], C = x.size() / x.shape()[0];
  Tensor<S> out({R, 1});
  out.data = x.val().mat(R, C).rowwise().sum();
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, R, C](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    tp.grad(ix).mat(R, C).colwise() += n.grad.data;
                  });
  return Var<S>{&t, id};
}

// ---------------------------------------------------------------------------
// Finite-difference checking helper (test utility, lives here so every module
// can gradient-check its ops without a separate harness).
// ---------------------------------------------------------------------------

// Central-difference gradient of f at x. f must be a pure function of x.
template <typename S, typename F>
Tensor<S> fd_gradient(const Tensor<S>& x, F f, S eps = S(1e-5)) {
  Tensor<S> g(x.shape);
  Tensor<S> xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    S orig = xp.data[i];
    xp.data[i] = orig + eps;
    S up = f(xp);
    xp.data[i] = orig - eps;
    S dn = f(xp);
    xp.data[i] = orig;
    g.data[i] = (up - dn) / (S(2) * eps);
  }
  return g;
}

template <typename S>
S max_rel_error(const Tensor<S>& a, const Tensor<S>& b, S floor = S(1e-6)) {
  S worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    S denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), floor});
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace srhand
