#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/camera.h"
#include "srhand/mesh.h"
#include "srhand/tensor.h"

namespace srhand::render {

using geom::Camera;
using geom::FaceMat;
using geom::MatX;
using geom::MatX3;
using geom::Vec3;

template <typename S>
using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S>
using Bary = Eigen::Matrix<S, 3, 1>;

template <typename S>
S cross2(const Vec2<S>& a, const Vec2<S>& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Deterministic ownership of pixels that land exactly on a triangle edge:
// the edge with interior on its left owns the pixel when it points down the
// image, or rightward when horizontal.
template <typename S>
bool edge_owns_boundary(const Vec2<S>& e) {
  return e.y() > S(0) || (e.y() == S(0) && e.x() > S(0));
}

// Screen barycentrics of point q in triangle (u0,u1,u2), plus coverage under
// the boundary-ownership rule. Orientation-independent (no backface culling).
template <typename S>
bool barycentric_coverage(const Vec2<S>& u0, const Vec2<S>& u1, const Vec2<S>& u2,
                          const Vec2<S>& q, Bary<S>& lambda) {
  S A = cross2<S>(u1 - u0, u2 - u0);
  if (A == S(0)) return false;
  lambda[0] = cross2<S>(u2 - u1, q - u1) / A;
  lambda[1] = cross2<S>(u0 - u2, q - u2) / A;
  lambda[2] = cross2<S>(u1 - u0, q - u0) / A;
  S flip = A > S(0) ? S(1) : S(-1);
  for (int i = 0; i < 3; ++i) {
    if (lambda[i] > S(0)) continue;
    if (lambda[i] < S(0)) return false;
    // exactly on the edge opposite vertex i
    Vec2<S> e;
    if (i == 0) e = (u2 - u1) * flip;
    if (i == 1) e = (u0 - u2) * flip;
    if (i == 2) e = (u1 - u0) * flip;
    if (!edge_owns_boundary<S>(e)) return false;
  }
  return true;
}

// Fixed-visibility rasterization record. Covered pixels remember their face,
// screen barycentrics lambda, perspective-correct weights beta, and depth;
// everything downstream (attribute interpolation and its gradients) reuses it
// with visibility held constant.
template <typename S>
struct RasterResult {
  Index height = 0, width = 0;
  std::vector<Index> face;          // per pixel, -1 = background
  std::vector<Bary<S>> lambda;      // screen barycentrics
  std::vector<Bary<S>> beta;        // perspective-correct weights
  Tensor<S> depth;                  // [1,H,W], 0 outside coverage
  Tensor<S> mask;                   // [1,H,W], {0,1}

  bool covered(Index r, Index c) const { return face[static_cast<std::size_t>(r * width + c)] >= 0; }
};

// Projected vertex positions (u, v, z-depth), one row per vertex.
template <typename S>
MatX3<S> project_all(const MatX3<S>& verts, const Camera<S>& cam) {
  MatX3<S> p(verts.rows(), 3);
  for (Index v = 0; v < verts.rows(); ++v)
    p.row(v) = cam.project(verts.row(v).transpose()).transpose();
  return p;
}

// Z-buffered rasterization with center sampling. Faces with any vertex closer
// than `near` are clipped. Depth ties keep the lower face id (faces scanned
// in order with a strict test).
template <typename S>
RasterResult<S> rasterize_mesh(const MatX3<S>& verts, const FaceMat& F, const Camera<S>& cam,
                               S near = S(1e-4)) {
  RasterResult<S> out;
  out.height = cam.height;
  out.width = cam.width;
  std::size_t n = static_cast<std::size_t>(cam.height * cam.width);
  out.face.assign(n, -1);
  out.lambda.assign(n, Bary<S>::Zero());
  out.beta.assign(n, Bary<S>::Zero());
  out.depth = Tensor<S>::zeros({1, cam.height, cam.width});
  out.mask = Tensor<S>::zeros({1, cam.height, cam.width});

  MatX3<S> proj = project_all(verts, cam);
  for (Index f = 0; f < F.rows(); ++f) {
    Vec3<S> p0 = proj.row(F(f, 0)).transpose();
    Vec3<S> p1 = proj.row(F(f, 1)).transpose();
    Vec3<S> p2 = proj.row(F(f, 2)).transpose();
    if (p0.z() <= near || p1.z() <= near || p2.z() <= near) continue;
    Vec2<S> u0 = p0.template head<2>(), u1 = p1.template head<2>(), u2 = p2.template head<2>();

    S xmin = std::min({u0.x(), u1.x(), u2.x()}), xmax = std::max({u0.x(), u1.x(), u2.x()});
    S ymin = std::min({u0.y(), u1.y(), u2.y()}), ymax = std::max({u0.y(), u1.y(), u2.y()});
    Index c0 = std::max<Index>(0, static_cast<Index>(std::ceil(xmin - S(0.5))));
    Index c1 = std::min<Index>(cam.width - 1, static_cast<Index>(std::floor(xmax - S(0.5))));
    Index r0 = std::max<Index>(0, static_cast<Index>(std::ceil(ymin - S(0.5))));
    Index r1 = std::min<Index>(cam.height - 1, static_cast<Index>(std::floor(ymax - S(0.5))));

    for (Index r = r0; r <= r1; ++r)
      for (Index c = c0; c <= c1; ++c) {
        Vec2<S> q(static_cast<S>(c) + S(0.5), static_cast<S>(r) + S(0.5));
        Bary<S> lam;
        if (!barycentric_coverage<S>(u0, u1, u2, q, lam)) continue;
        S inv_sum = lam[0] / p0.z() + lam[1] / p1.z() + lam[2] / p2.z();
        if (inv_sum <= S(0)) continue;
        S depth = S(1) / inv_sum;
        std::size_t px = static_cast<std::size_t>(r * cam.width + c);
        if (out.face[px] >= 0 && out.depth.data[static_cast<Index>(px)] <= depth) continue;
        out.face[px] = f;
        out.lambda[px] = lam;
        out.beta[px] = Bary<S>(lam[0] / p0.z(), lam[1] / p1.z(), lam[2] / p2.z()) * depth;
        out.depth.data[static_cast<Index>(px)] = depth;
        out.mask.data[static_cast<Index>(px)] = S(1);
      }
  }
  return out;
}

// Perspective-correct interpolation of per-vertex attributes [V,k] into an
// image [k,H,W]; background stays 0.
template <typename S>
Tensor<S> interpolate_attr(const RasterResult<S>& ras, const FaceMat& F,
                           const Eigen::Ref<const MatX<S>>& attr) {
  Index k = attr.cols();
  Tensor<S> img = Tensor<S>::zeros({k, ras.height, ras.width});
  Index hw = ras.height * ras.width;
  for (Index px = 0; px < hw; ++px) {
    Index f = ras.face[static_cast<std::size_t>(px)];
    if (f < 0) continue;
    const Bary<S>& b = ras.beta[static_cast<std::size_t>(px)];
    for (Index ch = 0; ch < k; ++ch)
      img.data[ch * hw + px] = b[0] * attr(F(f, 0), ch) + b[1] * attr(F(f, 1), ch) +
                               b[2] * attr(F(f, 2), ch);
  }
  return img;
}

// Camera-space unit normal map [3,H,W] plus mask; interpolated normals are
// renormalized per pixel, background is zero.
template <typename S>
struct NormalMap {
  Tensor<S> normals;  // [3,H,W]
  Tensor<S> mask;     // [1,H,W]
};

template <typename S>
NormalMap<S> render_normal_map(const MatX3<S>& verts, const FaceMat& F, const Camera<S>& cam,
                               S near = S(1e-4)) {
  MatX3<S> n_world = geom::vertex_normals_plain<S>(verts, F);
  MatX3<S> n_cam = n_world * cam.R.transpose();
  RasterResult<S> ras = rasterize_mesh<S>(verts, F, cam, near);
  Tensor<S> img = interpolate_attr<S>(ras, F, n_cam);
  Index hw = cam.height * cam.width;
  for (Index px = 0; px < hw; ++px) {
    if (ras.face[static_cast<std::size_t>(px)] < 0) continue;
    Vec3<S> n(img.data[px], img.data[hw + px], img.data[2 * hw + px]);
    S len = n.norm();
    if (len > S(1e-12)) n /= len;
    img.data[px] = n.x();
    img.data[hw + px] = n.y();
    img.data[2 * hw + px] = n.z();
  }
  return {std::move(img), ras.mask};
}

// Vertex projection plus depth-buffer visibility: a vertex is visible when it
// projects inside the image, is in front of the near plane, and its depth is
// within eps_z of the rasterized surface at its pixel.
template <typename S>
struct VertexProjection {
  MatX<S> pixels;            // [V,2] (u,v)
  std::vector<char> visible;  // [V]
};

template <typename S>
VertexProjection<S> project_vertices(const MatX3<S>& verts, const FaceMat& F, const Camera<S>& cam,
                                     S eps_z = S(1e-3), S near = S(1e-4)) {
  RasterResult<S> ras = rasterize_mesh<S>(verts, F, cam, near);
  MatX3<S> proj = project_all(verts, cam);
  VertexProjection<S> out;
  out.pixels.resize(verts.rows(), 2);
  out.visible.assign(static_cast<std::size_t>(verts.rows()), 0);
  for (Index v = 0; v < verts.rows(); ++v) {
    out.pixels(v, 0) = proj(v, 0);
    out.pixels(v, 1) = proj(v, 1);
    if (proj(v, 2) <= near) continue;
    Index c = static_cast<Index>(std::floor(proj(v, 0)));
    Index r = static_cast<Index>(std::floor(proj(v, 1)));
    if (c < 0 || c >= cam.width || r < 0 || r >= cam.height) continue;
    std::size_t px = static_cast<std::size_t>(r * cam.width + c);
    // an uncovered pixel has no occluder in front of the vertex
    if (ras.face[px] < 0 || proj(v, 2) <= ras.depth.data[static_cast<Index>(px)] + eps_z)
      out.visible[static_cast<std::size_t>(v)] = 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable attribute rasterization. The face-per-pixel assignment is
// frozen from a forward RasterResult (hard visibility); barycentric weights
// are recomputed from the live vertex values, so gradients flow to vertex
// attributes exactly and to positions through the perspective-correct
// weights. With the same vertices that produced the RasterResult the output
// matches interpolate_attr bit for bit.
// ---------------------------------------------------------------------------

namespace detail {

// lambda_i = N_i/A at pixel q, plus d lambda_i / d u_j as 2-vectors.
template <typename S>
void screen_bary_with_jac(const Vec2<S> u[3], const Vec2<S>& q, Bary<S>& lam,
                          Vec2<S> dlam[3][3]) {
  S A = cross2<S>(u[1] - u[0], u[2] - u[0]);
  Vec2<S> a01 = u[1] - u[0], a02 = u[2] - u[0];
  Vec2<S> dA[3] = {Vec2<S>(a01.y() - a02.y(), a02.x() - a01.x()), Vec2<S>(a02.y(), -a02.x()),
                   Vec2<S>(-a01.y(), a01.x())};
  S N[3];
  for (int i = 0; i < 3; ++i) {
    int i1 = (i + 1) % 3, i2 = (i + 2) % 3;
    N[i] = cross2<S>(u[i2] - u[i1], q - u[i1]);
    lam[i] = N[i] / A;
  }
  for (int i = 0; i < 3; ++i) {
    int i1 = (i + 1) % 3, i2 = (i + 2) % 3;
    Vec2<S> cvec = u[i2] - u[i1];
    Vec2<S> dvec = q - u[i1];
    for (int j = 0; j < 3; ++j) {
      Vec2<S> dNij = Vec2<S>::Zero();
      if (j == i1) dNij = Vec2<S>(cvec.y() - dvec.y(), dvec.x() - cvec.x());
      if (j == i2) dNij = Vec2<S>(dvec.y(), -dvec.x());
      dlam[i][j] = (dNij - lam[i] * dA[j]) / A;
    }
  }
}

}  // namespace detail

template <typename S>
Var<S> rasterize_attr(Var<S> attr, Var<S> verts, const RasterResult<S>& ras_in, const FaceMat& F,
                      const Camera<S>& cam) {
  Tape<S>& t = *attr.tape;
  Index Vrows = attr.shape()[0];
  Index k = attr.shape()[1];
  Index H = ras_in.height, W = ras_in.width, hw = H * W;
  auto face = std::make_shared<std::vector<Index>>(ras_in.face);

  MatX3<S> proj = project_all<S>(MatX3<S>(verts.val().mat(Vrows, 3)), cam);
  Tensor<S> img = Tensor<S>::zeros({k, H, W});
  auto A = attr.val().mat(Vrows, k);
  for (Index px = 0; px < hw; ++px) {
    Index f = (*face)[static_cast<std::size_t>(px)];
    if (f < 0) continue;
    Index vi[3] = {F(f, 0), F(f, 1), F(f, 2)};
    Vec2<S> u[3];
    S z[3];
    for (int i = 0; i < 3; ++i) {
      u[i] = Vec2<S>(proj(vi[i], 0), proj(vi[i], 1));
      z[i] = proj(vi[i], 2);
    }
    Vec2<S> q(static_cast<S>(px % W) + S(0.5), static_cast<S>(px / W) + S(0.5));
    Bary<S> lam;
    Vec2<S> dlam[3][3];
    detail::screen_bary_with_jac<S>(u, q, lam, dlam);
    S inv_sum = lam[0] / z[0] + lam[1] / z[1] + lam[2] / z[2];
    Bary<S> beta = Bary<S>(lam[0] / z[0], lam[1] / z[1], lam[2] / z[2]) / inv_sum;
    for (Index ch = 0; ch < k; ++ch)
      img.data[ch * hw + px] =
          beta[0] * A(vi[0], ch) + beta[1] * A(vi[1], ch) + beta[2] * A(vi[2], ch);
  }

  int ia = attr.id, iv = verts.id;
  int id = t.push(
      std::move(img), srhand::detail::any_grad<S>({attr, verts}),
      [ia, iv, Vrows, k, W, hw, face, F, cam](Tape<S>& tp, typename Tape<S>::Node& n) {
        auto A2 = tp.value(ia).mat(Vrows, k);
        bool want_attr = tp.node(ia).requires_grad;
        bool want_pos = tp.node(iv).requires_grad;
        MatX3<S> verts_val = tp.value(iv).mat(Vrows, 3);
        MatX3<S> proj2 = project_all<S>(verts_val, cam);
        for (Index px = 0; px < hw; ++px) {
          Index f = (*face)[static_cast<std::size_t>(px)];
          if (f < 0) continue;
          Index vi[3] = {F(f, 0), F(f, 1), F(f, 2)};
          Vec2<S> u[3];
          S z[3];
          for (int i = 0; i < 3; ++i) {
            u[i] = Vec2<S>(proj2(vi[i], 0), proj2(vi[i], 1));
            z[i] = proj2(vi[i], 2);
          }
          Vec2<S> q(static_cast<S>(px % W) + S(0.5), static_cast<S>(px / W) + S(0.5));
          Bary<S> lam;
          Vec2<S> dlam[3][3];
          detail::screen_bary_with_jac<S>(u, q, lam, dlam);
          S inv_sum = lam[0] / z[0] + lam[1] / z[1] + lam[2] / z[2];
          Bary<S> beta = Bary<S>(lam[0] / z[0], lam[1] / z[1], lam[2] / z[2]) / inv_sum;

          Bary<S> gbeta = Bary<S>::Zero();
          for (Index ch = 0; ch < k; ++ch) {
            S g = n.grad.data[ch * hw + px];
            if (g == S(0)) continue;
            for (int i = 0; i < 3; ++i) {
              if (want_attr) tp.grad(ia).mat(Vrows, k)(vi[i], ch) += beta[i] * g;
              gbeta[i] += A2(vi[i], ch) * g;
            }
          }
          if (!want_pos || gbeta.isZero()) continue;

          S gdot = gbeta.dot(beta);
          Bary<S> glam, gz;
          for (int i = 0; i < 3; ++i) {
            glam[i] = (gbeta[i] - gdot) / (z[i] * inv_sum);
            gz[i] = -(gbeta[i] - gdot) * lam[i] / (z[i] * z[i] * inv_sum);
          }
          Vec2<S> gu[3] = {Vec2<S>::Zero(), Vec2<S>::Zero(), Vec2<S>::Zero()};
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) gu[j] += glam[i] * dlam[i][j];

          auto GV = tp.grad(iv).mat(Vrows, 3);
          for (int j = 0; j < 3; ++j) {
            Vec3<S> xc = cam.to_camera(verts_val.row(vi[j]).transpose());
            Vec3<S> gcam(cam.fx / xc.z() * gu[j].x(), cam.fy / xc.z() * gu[j].y(),
                         -cam.fx * xc.x() / (xc.z() * xc.z()) * gu[j].x() -
                             cam.fy * xc.y() / (xc.z() * xc.z()) * gu[j].y() + gz[j]);
            GV.row(vi[j]) += (cam.R.transpose() * gcam).transpose();
          }
        }
      });
  return Var<S>{&t, id};
}

// ---------------------------------------------------------------------------
// Spherical-harmonics shading (order 2, real basis).
// ---------------------------------------------------------------------------

inline constexpr double kSh0 = 0.282095;
inline constexpr double kSh1 = 0.488603;
inline constexpr double kSh2 = 1.092548;
inline constexpr double kSh3 = 0.315392;
inline constexpr double kSh4 = 0.546274;

// Basis order: [1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2] with std constants.
template <typename S>
Eigen::Matrix<S, 9, 1> sh_basis(const Vec3<S>& n) {
  Eigen::Matrix<S, 9, 1> b;
  S x = n.x(), y = n.y(), z = n.z();
  b[0] = S(kSh0);
  b[1] = S(kSh1) * y;
  b[2] = S(kSh1) * z;
  b[3] = S(kSh1) * x;
  b[4] = S(kSh2) * x * y;
  b[5] = S(kSh2) * y * z;
  b[6] = S(kSh3) * (S(3) * z * z - S(1));
  b[7] = S(kSh2) * x * z;
  b[8] = S(kSh4) * (x * x - y * y);
  return b;
}

template <typename S>
Eigen::Matrix<S, 9, 3> sh_basis_jacobian(const Vec3<S>& n) {
  Eigen::Matrix<S, 9, 3> J = Eigen::Matrix<S, 9, 3>::Zero();
  S x = n.x(), y = n.y(), z = n.z();
  J(1, 1) = S(kSh1);
  J(2, 2) = S(kSh1);
  J(3, 0) = S(kSh1);
  J(4, 0) = S(kSh2) * y;
  J(4, 1) = S(kSh2) * x;
  J(5, 1) = S(kSh2) * z;
  J(5, 2) = S(kSh2) * y;
  J(6, 2) = S(6) * S(kSh3) * z;
  J(7, 0) = S(kSh2) * z;
  J(7, 2) = S(kSh2) * x;
  J(8, 0) = S(2) * S(kSh4) * x;
  J(8, 1) = -S(2) * S(kSh4) * y;
  return J;
}

// Plain path: albedo [V,3] * SH irradiance of unit normals under Y [9,3].
// Non-unit normals are renormalized.
template <typename S>
MatX<S> shade_sh_plain(const Eigen::Ref<const MatX<S>>& albedo,
                       const Eigen::Ref<const MatX<S>>& normals,
                       const Eigen::Ref<const MatX<S>>& Y) {
  MatX<S> out(albedo.rows(), 3);
  for (Index v = 0; v < albedo.rows(); ++v) {
    Vec3<S> n = normals.row(v).transpose();
    S len = n.norm();
    if (len > S(1e-12)) n /= len;
    Eigen::Matrix<S, 9, 1> b = sh_basis<S>(n);
    for (Index c = 0; c < 3; ++c) out(v, c) = albedo(v, c) * Y.col(c).dot(b);
  }
  return out;
}

// Tape op: shaded[v,c] = albedo[v,c] * sum_k Y[k,c] B_k(n_v). Normals are
// assumed unit (as produced by vertex_normals); gradients flow to albedo,
// normals, and Y.
template <typename S>
Var<S> sh_shade(Var<S> albedo, Var<S> normals, Var<S> Y) {
  Tape<S>& t = *albedo.tape;
  Index V = albedo.shape()[0];
  Tensor<S> out({V, 3});
  auto Al = albedo.val().mat(V, 3);
  auto Nm = normals.val().mat(V, 3);
  auto Ym = Y.val().mat(9, 3);
  auto Om = out.mat(V, 3);
  for (Index v = 0; v < V; ++v) {
    Eigen::Matrix<S, 9, 1> b = sh_basis<S>(Vec3<S>(Nm.row(v).transpose()));
    for (Index c = 0; c < 3; ++c) Om(v, c) = Al(v, c) * Ym.col(c).dot(b);
  }
  int ia = albedo.id, in = normals.id, iy = Y.id;
  int id = t.push(
      std::move(out), srhand::detail::any_grad<S>({albedo, normals, Y}),
      [ia, in, iy, V](Tape<S>& tp, typename Tape<S>::Node& n) {
        auto Al2 = tp.value(ia).mat(V, 3);
        auto Nm2 = tp.value(in).mat(V, 3);
        auto Ym2 = tp.value(iy).mat(9, 3);
        auto G = n.grad.mat(V, 3);
        bool wa = tp.node(ia).requires_grad;
        bool wn = tp.node(in).requires_grad;
        bool wy = tp.node(iy).requires_grad;
        for (Index v = 0; v < V; ++v) {
          Vec3<S> nv = Nm2.row(v).transpose();
          Eigen::Matrix<S, 9, 1> b = sh_basis<S>(nv);
          Eigen::Matrix<S, 9, 3> Jb;
          if (wn) Jb = sh_basis_jacobian<S>(nv);
          for (Index c = 0; c < 3; ++c) {
            S g = G(v, c);
            if (g == S(0)) continue;
            S irr = Ym2.col(c).dot(b);
            if (wa) tp.grad(ia).mat(V, 3)(v, c) += irr * g;
            if (wy) tp.grad(iy).mat(9, 3).col(c) += b * (Al2(v, c) * g);
            if (wn)
              tp.grad(in).mat(V, 3).row(v) +=
                  (Jb.transpose() * Ym2.col(c)).transpose() * (Al2(v, c) * g);
          }
        }
      });
  return Var<S>{&t, id};
}

// Fixed soft studio lighting used for ground-truth renders: ambient plus a
// gentle directional tilt, identical per channel.
template <typename S>
MatX<S> default_lighting() {
  MatX<S> Y = MatX<S>::Zero(9, 3);
  for (Index c = 0; c < 3; ++c) {
    Y(0, c) = S(2.8);   // ambient
    Y(2, c) = S(-0.6);  // z tilt (toward camera half-space)
    Y(1, c) = S(0.35);
    Y(3, c) = S(0.25);
  }
  return Y;
}

}  // namespace srhand::render
