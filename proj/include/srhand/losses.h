#pragma once

#include <Eigen/Sparse>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/image_ops.h"
#include "srhand/mesh.h"
#include "srhand/nn.h"

namespace srhand::loss {

using geom::FaceMat;

// ---------------------------------------------------------------------------
// Perceptual distance: mean squared activation difference under a frozen,
// seed-deterministic conv stack evaluated at 3 dyadic scales. The raw pixel
// difference is included as level 0, so the distance is zero iff the inputs
// are identical. Not comparable with pretrained-LPIPS absolute numbers; an
// external feature extractor can be swapped in through the same Params.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kPerceptualSeed = 77161;

template <typename S>
struct Perceptual {
  nn::Params<S> params;
  Index feat = 8;
  int levels = 3;

  Perceptual() {
    Rng rng(kPerceptualSeed);
    for (int l = 0; l < levels; ++l) {
      nn::Conv<S>{lname(l) + ".c0", 3, feat, 3}.init(params, rng);
      nn::Conv<S>{lname(l) + ".c1", feat, feat, 3}.init(params, rng);
    }
  }

  static std::string lname(int l) { return "perc.l" + std::to_string(l); }

  // a, b: [3,H,W]. Gradients flow into a and b only; the stack is frozen.
  Var<S> operator()(Tape<S>& tape, Var<S> a, Var<S> b) const {
    nn::Bound<S> bd = nn::bind(tape, params, false);
    Var<S> dist = mean(square(a - b));
    int used = 1;
    for (int l = 0; l < levels; ++l) {
      nn::Conv<S> c0{lname(l) + ".c0", 3, feat, 3};
      nn::Conv<S> c1{lname(l) + ".c1", feat, feat, 3};
      Var<S> fa = relu(c1(bd, relu(c0(bd, a))));
      Var<S> fb = relu(c1(bd, relu(c0(bd, b))));
      dist = dist + mean(square(fa - fb));
      ++used;
      if (a.shape()[1] % 2 || a.shape()[2] % 2) break;
      a = avgpool2(a);
      b = avgpool2(b);
    }
    return scale(dist, S(1) / static_cast<S>(used));
  }
};

// Mean absolute difference over masked pixels; mask [1,H,W] in {0,1} applies
// to every channel. Empty mask gives 0.
template <typename S>
Var<S> masked_l1(Tape<S>& tape, Var<S> a, Var<S> b, const Tensor<S>& mask) {
  Index C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  Tensor<S> m3({C, H, W});
  for (Index c = 0; c < C; ++c) m3.data.segment(c * H * W, H * W) = mask.data;
  S denom = std::max(mask.data.sum() * static_cast<S>(C), S(1));
  return scale(sum(abs_op((a - b) * make_const(tape, m3))), S(1) / denom);
}

template <typename S>
Var<S> l1_all(Var<S> a, Var<S> b) {
  return mean(abs_op(a - b));
}

// L_rgb: masked L1 plus weighted perceptual distance on the full images.
template <typename S>
Var<S> l_rgb(Tape<S>& tape, Var<S> render, Var<S> target, const Tensor<S>& mask, S lambda_perc,
             const Perceptual<S>& perc) {
  Var<S> out = masked_l1(tape, render, target, mask);
  if (lambda_perc > S(0)) out = out + scale(perc(tape, render, target), lambda_perc);
  return out;
}

// ---------------------------------------------------------------------------
// Mesh regularizers
// ---------------------------------------------------------------------------

// Uniform graph Laplacian L = D - Adj: symmetric, zero row sums.
template <typename S>
Eigen::SparseMatrix<S> uniform_laplacian(const FaceMat& faces, Index V) {
  auto edges = geom::mesh_edges(faces);
  std::vector<Eigen::Triplet<S>> trip;
  trip.reserve(edges.size() * 4);
  for (const auto& [a, b] : edges) {
    trip.emplace_back(a, b, S(-1));
    trip.emplace_back(b, a, S(-1));
    trip.emplace_back(a, a, S(1));
    trip.emplace_back(b, b, S(1));
  }
  Eigen::SparseMatrix<S> L(V, V);
  L.setFromTriplets(trip.begin(), trip.end());
  return L;
}

// Signed edge-difference operator [E,V]: row e = v_i - v_j, edges in the
// canonical geom::mesh_edges order (matching geom::edge_lengths).
template <typename S>
Eigen::SparseMatrix<S> edge_difference_matrix(const std::vector<std::pair<Index, Index>>& edges,
                                              Index V) {
  std::vector<Eigen::Triplet<S>> trip;
  trip.reserve(edges.size() * 2);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    trip.emplace_back(static_cast<Index>(e), edges[e].first, S(1));
    trip.emplace_back(static_cast<Index>(e), edges[e].second, S(-1));
  }
  Eigen::SparseMatrix<S> D(static_cast<Index>(edges.size()), V);
  D.setFromTriplets(trip.begin(), trip.end());
  return D;
}

// y = A x for a constant sparse A; backward is A^T g. A is copied so the
// backward pass does not depend on the caller keeping it alive.
template <typename S>
Var<S> sparse_apply(Var<S> x, const Eigen::SparseMatrix<S>& A) {
  Tape<S>& t = *x.tape;
  Index R = A.rows(), C = x.size() / x.shape()[0];
  Tensor<S> out({R, C});
  out.mat(R, C) = A * x.val().mat(x.shape()[0], C);
  int ix = x.id;
  Index V = x.shape()[0];
  auto Ak = std::make_shared<Eigen::SparseMatrix<S>>(A);
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, Ak, R, C, V](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    tp.grad(ix).mat(V, C) += Ak->transpose() * n.grad.mat(R, C);
                  });
  return Var<S>{&t, id};
}

// Per-part scalar weights expanded to a per-vertex weight vector.
template <typename S>
Tensor<S> per_vertex_weights(const std::vector<Index>& part, const std::vector<S>& phi) {
  Tensor<S> w({static_cast<Index>(part.size())});
  for (std::size_t v = 0; v < part.size(); ++v) {
    Index p = part[v];
    if (p < 0 || p >= static_cast<Index>(phi.size()))
      throw ConfigError("part label out of range of part weights");
    w.data[static_cast<Index>(v)] = phi[static_cast<std::size_t>(p)];
  }
  return w;
}

// sum_v phi_v * ||(A values)_v||^2 / V
template <typename S>
Var<S> part_laplacian(Var<S> values, const Eigen::SparseMatrix<S>& A, const Tensor<S>& phi_vert) {
  Index V = values.shape()[0], k = values.shape()[1];
  Tape<S>& t = *values.tape;
  Tensor<S> wexp({V, k});
  for (Index v = 0; v < V; ++v) wexp.mat(V, k).row(v).setConstant(phi_vert.data[v]);
  Var<S> lap = sparse_apply(values, A);
  return scale(sum(square(lap) * make_const(t, wexp)), S(1) / static_cast<S>(V));
}

// Mean squared difference between current edge lengths and reference lengths.
// D is the edge_difference_matrix of the shared topology; ref follows the same
// edge order (geom::edge_lengths of the rest mesh).
template <typename S>
Var<S> edge_loss(Var<S> verts, const Eigen::SparseMatrix<S>& D, const Tensor<S>& ref_len) {
  Tape<S>& t = *verts.tape;
  Var<S> diff = sparse_apply(verts, D);
  Var<S> len = sqrt_op(rowsum(square(diff)));
  Tensor<S> ref = ref_len.reshaped({ref_len.size(), 1});
  return mean(square(len - make_const(t, ref)));
}

// Perceptual pull of the mean-albedo render toward the SR target; the caller
// renders with the pose-averaged albedo detached so albedo itself is not
// pushed around by this term (geometry has to explain the residual).
template <typename S>
Var<S> mean_texture_loss(Tape<S>& tape, Var<S> mean_albedo_render, Var<S> target,
                         const Perceptual<S>& perc) {
  return perc(tape, mean_albedo_render, target);
}

// ---------------------------------------------------------------------------
// Weighted total with a logged breakdown
// ---------------------------------------------------------------------------

template <typename S>
struct TermReport {
  std::string name;
  S value = 0, weight = 0;
};

template <typename S>
Var<S> weighted_total(Tape<S>& tape, const std::vector<std::pair<std::string, Var<S>>>& terms,
                      const std::vector<S>& weights, std::vector<TermReport<S>>* report) {
  if (terms.size() != weights.size()) throw ConfigError("loss term/weight count mismatch");
  Var<S> total = make_const(tape, Tensor<S>::scalar(S(0)));
  for (std::size_t i = 0; i < terms.size(); ++i) {
    S v = terms[i].second.val().data[0];
    if (!std::isfinite(v)) throw DivergenceError("non-finite loss term: " + terms[i].first);
    if (report) report->push_back({terms[i].first, v, weights[i]});
    if (weights[i] != S(0)) total = total + scale(terms[i].second, weights[i]);
  }
  return total;
}

}  // namespace srhand::loss
