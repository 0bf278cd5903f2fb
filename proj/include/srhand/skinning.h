#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/mesh.h"

namespace srhand::geom {

template <typename S>
using Mat34 = Eigen::Matrix<S, 3, 4>;

// Axis-angle to rotation matrix. Valid for |angle| < pi per the pose contract.
template <typename S>
Mat3<S> rodrigues(const Vec3<S>& aa) {
  S angle = aa.norm();
  if (angle < S(1e-12)) return Mat3<S>::Identity();
  Vec3<S> axis = aa / angle;
  Eigen::AngleAxis<S> rot(angle, axis);
  return rot.toRotationMatrix();
}

// Pose of the articulated template: local joint rotations plus a root
// translation; beta are shape coefficients into the template's linear basis.
template <typename S>
struct Pose {
  MatX3<S> joint_rotations;  // [J,3] axis-angle, local per joint
  Vec3<S> root_translation = Vec3<S>::Zero();
  Eigen::Matrix<S, Eigen::Dynamic, 1> beta;  // size 0 when unused

  static Pose identity(Index num_joints) {
    Pose p;
    p.joint_rotations = MatX3<S>::Zero(num_joints, 3);
    return p;
  }
};

// Per-joint vertex transforms A_j = G_j [I | -j_j] where G_j chains local
// [R_j | offset] down the hierarchy. Identity pose gives A_j = [I | 0].
template <typename S>
std::vector<Mat34<S>> joint_transforms(const SkinnedTemplate<S>& tpl, const Pose<S>& pose) {
  Index J = tpl.num_joints();
  std::vector<Mat34<S>> G(static_cast<std::size_t>(J));
  std::vector<char> done(static_cast<std::size_t>(J), 0);
  // parents always precede children when walking in hierarchy order
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(J));
  while (static_cast<Index>(order.size()) < J)
    for (Index j = 0; j < J; ++j) {
      if (done[static_cast<std::size_t>(j)]) continue;
      int p = tpl.parent[static_cast<std::size_t>(j)];
      if (p == -1 || done[static_cast<std::size_t>(p)]) {
        order.push_back(j);
        done[static_cast<std::size_t>(j)] = 1;
      }
    }

  for (Index j : order) {
    Mat3<S> R = rodrigues<S>(pose.joint_rotations.row(j).transpose());
    int p = tpl.parent[static_cast<std::size_t>(j)];
    Mat34<S> L;
    if (p == -1) {
      L.template leftCols<3>() = R;
      L.col(3) = tpl.joints.row(j).transpose() + pose.root_translation;
    } else {
      L.template leftCols<3>() = R;
      L.col(3) = (tpl.joints.row(j) - tpl.joints.row(p)).transpose();
      const Mat34<S>& Gp = G[static_cast<std::size_t>(p)];
      Mat34<S> composed;
      composed.template leftCols<3>() = Gp.template leftCols<3>() * L.template leftCols<3>();
      composed.col(3) = Gp.template leftCols<3>() * L.col(3) + Gp.col(3);
      L = composed;
    }
    G[static_cast<std::size_t>(j)] = L;
  }

  std::vector<Mat34<S>> A(static_cast<std::size_t>(J));
  for (Index j = 0; j < J; ++j) {
    const Mat34<S>& Gj = G[static_cast<std::size_t>(j)];
    A[static_cast<std::size_t>(j)].template leftCols<3>() = Gj.template leftCols<3>();
    A[static_cast<std::size_t>(j)].col(3) =
        Gj.col(3) - Gj.template leftCols<3>() * tpl.joints.row(j).transpose();
  }
  return A;
}

template <typename S>
MatX3<S> apply_shape(const SkinnedTemplate<S>& tpl, const Pose<S>& pose) {
  MatX3<S> V = tpl.vertices;
  for (Index b = 0; b < pose.beta.size() && b < tpl.shape_basis.rows(); ++b) {
    Eigen::Map<const MatX3<S>> basis(tpl.shape_basis.row(b).data(), tpl.num_vertices(), 3);
    V += pose.beta[b] * basis;
  }
  return V;
}

// Linear blend skinning of explicit vertices/weights (non-differentiable path).
template <typename S>
MatX3<S> lbs(const MatX3<S>& rest, const MatX<S>& weights, const std::vector<Mat34<S>>& A) {
  MatX3<S> out = MatX3<S>::Zero(rest.rows(), 3);
  for (Index v = 0; v < rest.rows(); ++v) {
    Vec3<S> x = rest.row(v).transpose();
    Vec3<S> acc = Vec3<S>::Zero();
    for (Index j = 0; j < weights.cols(); ++j) {
      S w = weights(v, j);
      if (w == S(0)) continue;
      const Mat34<S>& Aj = A[static_cast<std::size_t>(j)];
      acc += w * (Aj.template leftCols<3>() * x + Aj.col(3));
    }
    out.row(v) = acc.transpose();
  }
  return out;
}

// Full pose of the template at given pose/shape (rest mesh, no displacement).
template <typename S>
MatX3<S> pose_template(const SkinnedTemplate<S>& tpl, const Pose<S>& pose) {
  return lbs<S>(apply_shape(tpl, pose), tpl.weights, joint_transforms(tpl, pose));
}

}  // namespace srhand::geom

namespace srhand {

// Tape op: skin vertices [V,3] with weights [V,J] under fixed joint
// transforms. Gradients flow to both vertices and weights.
template <typename S>
Var<S> lbs_apply(Var<S> verts, Var<S> weights, const std::vector<geom::Mat34<S>>& A) {
  Tape<S>& t = *verts.tape;
  Index V = verts.shape()[0];
  Index J = weights.shape()[1];
  Tensor<S> out({V, 3});
  auto Vm = verts.val().mat(V, 3);
  auto Wm = weights.val().mat(V, J);
  auto Om = out.mat(V, 3);
  for (Index v = 0; v < V; ++v) {
    geom::Vec3<S> x = Vm.row(v).transpose();
    geom::Vec3<S> acc = geom::Vec3<S>::Zero();
    for (Index j = 0; j < J; ++j) {
      S w = Wm(v, j);
      if (w == S(0)) continue;
      const auto& Aj = A[static_cast<std::size_t>(j)];
      acc += w * (Aj.template leftCols<3>() * x + Aj.col(3));
    }
    Om.row(v) = acc.transpose();
  }
  int iv = verts.id, iw = weights.id;
  int id = t.push(std::move(out), detail::any_grad<S>({verts, weights}),
                  [iv, iw, V, J, A](Tape<S>& tp, typename Tape<S>::Node& n) {
                    auto G = n.grad.mat(V, 3);
                    auto Vm2 = tp.value(iv).mat(V, 3);
                    auto Wm2 = tp.value(iw).mat(V, J);
                    if (tp.node(iw).requires_grad) {
                      auto GW = tp.grad(iw).mat(V, J);
                      for (Index v = 0; v < V; ++v) {
                        geom::Vec3<S> g = G.row(v).transpose();
                        geom::Vec3<S> x = Vm2.row(v).transpose();
                        for (Index j = 0; j < J; ++j) {
                          const auto& Aj = A[static_cast<std::size_t>(j)];
                          GW(v, j) += g.dot(Aj.template leftCols<3>() * x + Aj.col(3));
                        }
                      }
                    }
                    if (tp.node(iv).requires_grad) {
                      auto GV = tp.grad(iv).mat(V, 3);
                      for (Index v = 0; v < V; ++v) {
                        geom::Vec3<S> g = G.row(v).transpose();
                        for (Index j = 0; j < J; ++j) {
                          S w = Wm2(v, j);
                          if (w == S(0)) continue;
                          const auto& Aj = A[static_cast<std::size_t>(j)];
                          GV.row(v) +=
                              (w * (Aj.template leftCols<3>().transpose() * g)).transpose();
                        }
                      }
                    }
                  });
  return Var<S>{&t, id};
}

// Tape op: area-weighted unit vertex normals of verts [V,3] under fixed
// topology. Vertices whose accumulated normal is near zero get a zero normal
// and no gradient.
template <typename S>
Var<S> vertex_normals(Var<S> verts, const geom::FaceMat& F) {
  Tape<S>& t = *verts.tape;
  Index V = verts.shape()[0];
  auto Vm = verts.val().mat(V, 3);
  geom::MatX3<S> m = geom::MatX3<S>::Zero(V, 3);  // pre-normalization sums
  for (Index f = 0; f < F.rows(); ++f) {
    geom::Vec3<S> a = Vm.row(F(f, 0)).transpose();
    geom::Vec3<S> b = Vm.row(F(f, 1)).transpose();
    geom::Vec3<S> c = Vm.row(F(f, 2)).transpose();
    geom::Vec3<S> fn = (b - a).cross(c - a);
    m.row(F(f, 0)) += fn.transpose();
    m.row(F(f, 1)) += fn.transpose();
    m.row(F(f, 2)) += fn.transpose();
  }
  Tensor<S> out({V, 3});
  auto Om = out.mat(V, 3);
  for (Index v = 0; v < V; ++v) {
    S len = m.row(v).norm();
    if (len > S(1e-20))
      Om.row(v) = m.row(v) / len;
    else
      Om.row(v).setZero();
  }
  int iv = verts.id;
  int id = t.push(
      std::move(out), verts.requires_grad(),
      [iv, V, F, m](Tape<S>& tp, typename Tape<S>::Node& n) {
        if (!tp.node(iv).requires_grad) return;
        // n = m/|m|: dL/dm = (I - n n^T) g / |m|
        geom::MatX3<S> gm(V, 3);
        auto G = n.grad.mat(V, 3);
        auto N = n.value.mat(V, 3);
        for (Index v = 0; v < V; ++v) {
          S len = m.row(v).norm();
          if (len <= S(1e-20)) {
            gm.row(v).setZero();
            continue;
          }
          geom::Vec3<S> nv = N.row(v).transpose();
          geom::Vec3<S> g = G.row(v).transpose();
          gm.row(v) = ((g - nv * nv.dot(g)) / len).transpose();
        }
        // face normal fn = (b-a) x (c-a): dL/du = w x g, dL/dw = g x u
        auto GV = tp.grad(iv).mat(V, 3);
        auto Vm2 = tp.value(iv).mat(V, 3);
        for (Index f = 0; f < F.rows(); ++f) {
          Index ia = F(f, 0), ib = F(f, 1), ic = F(f, 2);
          geom::Vec3<S> a = Vm2.row(ia).transpose();
          geom::Vec3<S> b = Vm2.row(ib).transpose();
          geom::Vec3<S> c = Vm2.row(ic).transpose();
          geom::Vec3<S> g = (gm.row(ia) + gm.row(ib) + gm.row(ic)).transpose();
          geom::Vec3<S> u = b - a, w = c - a;
          geom::Vec3<S> du = w.cross(g), dw = g.cross(u);
          GV.row(ib) += du.transpose();
          GV.row(ic) += dw.transpose();
          GV.row(ia) -= (du + dw).transpose();
        }
      });
  return Var<S>{&t, id};
}

}  // namespace srhand
