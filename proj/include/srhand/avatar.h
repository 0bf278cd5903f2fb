#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/nn.h"
#include "srhand/skinning.h"

namespace srhand::avatar {

struct AvatarConfig {
  Index code_dim = 16;
  std::vector<Index> head_hidden = {64, 64};
  double d_max = 0.005;  // meters; displacement head range via tanh
  bool color_conditioned = true;  // displacement head also sees the albedo head
};

// Row-per-vertex prediction of the three heads.
template <typename S>
struct AvatarPrediction {
  Var<S> w_res;   // [V,J] skinning residuals, raw
  Var<S> disp;    // [V,3] rest-frame displacements, |d| <= d_max per axis
  Var<S> albedo;  // [V,3] in (0,1)
};

template <typename S>
struct FineMesh {
  Var<S> verts;    // [V,3] posed
  Var<S> normals;  // [V,3] unit, area-weighted
  Var<S> albedo;   // [V,3]
  AvatarPrediction<S> pred;
};

// Pose encoding fed to every head: per-joint rotation matrices, flattened.
// Continuous in the joint angles, unlike raw axis-angle. The global root
// translation is excluded; appearance must not depend on where the hand is.
template <typename S>
Tensor<S> pose_features(const geom::Pose<S>& pose) {
  Index J = pose.joint_rotations.rows();
  Tensor<S> f({9 * J});
  for (Index j = 0; j < J; ++j) {
    geom::Vec3<S> aa = pose.joint_rotations.row(j).transpose();
    if (!aa.allFinite()) throw ConfigError("non-finite joint rotation");
    if (aa.norm() >= S(M_PI)) throw ConfigError("joint rotation angle must stay below pi");
    geom::Mat3<S> R = geom::rodrigues<S>(aa);
    for (Index r = 0; r < 3; ++r)
      for (Index c = 0; c < 3; ++c) f.data[j * 9 + r * 3 + c] = R(r, c);
  }
  return f;
}

// Per-vertex latent codes plus three MLP heads. The albedo head runs first;
// its output is part of the displacement head's input, so geometry can react
// to appearance. Final layers start at zero: the untrained avatar is exactly
// the skinned template with flat 0.5 albedo.
template <typename S>
struct EmbeddingNets {
  AvatarConfig cfg;
  Index verts = 0;
  Index joints = 0;
  nn::Params<S> params;

  Index pose_dim() const { return 9 * joints; }
  Index head_in() const { return cfg.code_dim + pose_dim(); }

  nn::Mlp<S> head_w() const { return {"phi_w", head_dims(head_in(), joints)}; }
  nn::Mlp<S> head_rho() const { return {"phi_rho", head_dims(head_in(), 3)}; }
  nn::Mlp<S> head_d() const {
    return {"phi_d", head_dims(head_in() + (cfg.color_conditioned ? 3 : 0), 3)};
  }

  std::vector<Index> head_dims(Index in, Index out) const {
    std::vector<Index> d;
    d.push_back(in);
    d.insert(d.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
    d.push_back(out);
    return d;
  }

  void init(const geom::SkinnedTemplate<S>& tpl, Rng& rng) {
    verts = tpl.num_vertices();
    joints = tpl.num_joints();
    Tensor<S>& codes = params.add("codes", {cfg.code_dim, verts});
    for (Index i = 0; i < codes.size(); ++i) codes.data[i] = S(0.1) * S(rng.normal());
    head_w().init(params, rng);
    head_rho().init(params, rng);
    head_d().init(params, rng);
    for (const std::string& h : {std::string("phi_w"), std::string("phi_rho"), std::string("phi_d")}) {
      std::string last = h + ".fc" + std::to_string(cfg.head_hidden.size());
      params.values.at(last + ".w").data.setZero();
      params.values.at(last + ".b").data.setZero();
    }
  }
};

// Broadcast one pose encoding to every vertex column.
template <typename S>
Tensor<S> pose_columns(const Tensor<S>& pf, Index verts) {
  Index P = pf.size();
  Tensor<S> out({P, verts});
  for (Index r = 0; r < P; ++r) out.mat(P, verts).row(r).setConstant(pf.data[r]);
  return out;
}

template <typename S>
Var<S> albedo_columns(Tape<S>& tape, const nn::Bound<S>& b, const EmbeddingNets<S>& nets,
                      Var<S> base) {
  (void)tape;
  return sigmoid(nets.head_rho()(b, base));
}

template <typename S>
AvatarPrediction<S> predict(Tape<S>& tape, const nn::Bound<S>& b, const EmbeddingNets<S>& nets,
                            const geom::Pose<S>& pose) {
  Var<S> base = vcat(b["codes"], make_const(tape, pose_columns(pose_features(pose), nets.verts)));
  Var<S> rho = albedo_columns(tape, b, nets, base);
  // per-axis tanh scaled so the Euclidean displacement norm stays <= d_max
  Var<S> d_in = nets.cfg.color_conditioned ? vcat(base, rho) : base;
  Var<S> disp = scale(tanh_op(nets.head_d()(b, d_in)), S(nets.cfg.d_max) / std::sqrt(S(3)));
  Var<S> wres = nets.head_w()(b, base);
  return {transpose_op(wres), transpose_op(disp), transpose_op(rho)};
}

// Fine mesh: displaced rest shape skinned by the corrected weights, with
// recomputed normals. Weight correction clamps negatives and renormalizes;
// a row driven to zero falls back to its base weights.
template <typename S>
FineMesh<S> pose_fine(Tape<S>& tape, const nn::Bound<S>& b, const EmbeddingNets<S>& nets,
                      const geom::SkinnedTemplate<S>& tpl, const geom::Pose<S>& pose) {
  if (nets.verts != tpl.num_vertices() || nets.joints != tpl.num_joints())
    throw ConfigError("embedding nets were initialized for a different template");
  AvatarPrediction<S> pred = predict(tape, b, nets, pose);
  Index V = tpl.num_vertices(), J = tpl.num_joints();

  Tensor<S> rest({V, 3});
  rest.mat(V, 3) = geom::apply_shape(tpl, pose);
  Var<S> displaced = make_const(tape, rest) + pred.disp;

  Tensor<S> wbase({V, J});
  wbase.mat(V, J) = tpl.weights;
  Var<S> w = row_normalize(relu(make_const(tape, wbase) + pred.w_res), wbase);

  Var<S> posed = lbs_apply(displaced, w, geom::joint_transforms(tpl, pose));
  Var<S> normals = vertex_normals(posed, tpl.faces);
  return {posed, normals, pred.albedo, pred};
}

// Arithmetic mean of the albedo head over a pose set, [V,3].
template <typename S>
Var<S> mean_albedo(Tape<S>& tape, const nn::Bound<S>& b, const EmbeddingNets<S>& nets,
                   const std::vector<geom::Pose<S>>& poses) {
  if (poses.empty()) throw ConfigError("mean albedo over an empty pose set");
  Var<S> acc;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    Var<S> base = vcat(b["codes"],
                       make_const(tape, pose_columns(pose_features(poses[i]), nets.verts)));
    Var<S> rho = albedo_columns(tape, b, nets, base);
    acc = i == 0 ? rho : acc + rho;
  }
  return transpose_op(scale(acc, S(1) / static_cast<S>(poses.size())));
}

// Detached convenience evaluation (export, tests).
template <typename S>
struct AvatarValues {
  Tensor<S> verts, normals, albedo, w_res, disp;
};

template <typename S>
AvatarValues<S> evaluate(const EmbeddingNets<S>& nets, const geom::SkinnedTemplate<S>& tpl,
                         const geom::Pose<S>& pose) {
  Tape<S> tape;
  nn::Bound<S> b = nn::bind(tape, nets.params, false);
  FineMesh<S> fm = pose_fine(tape, b, nets, tpl, pose);
  return {fm.verts.val(), fm.normals.val(), fm.albedo.val(), fm.pred.w_res.val(),
          fm.pred.disp.val()};
}

}  // namespace srhand::avatar
