// Adaptive fine-tuning: the SR network and the explicit avatar supervise each
// other. Per epoch the avatar takes one optimization step against the current
// SR images; on scheduled rounds the SR decoder takes a few steps against the
// avatar's renders (multi-view consistency, wavelet anchoring to the initial
// SR output, adversarial realism), then all SR images are regenerated.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/avatar.h"
#include "srhand/giif.h"
#include "srhand/image_ops.h"
#include "srhand/losses.h"
#include "srhand/nn.h"
#include "srhand/rasterizer.h"
#include "srhand/scene.h"

namespace srhand::ft {

using geom::FaceMat;
template <typename S>
using MatX = geom::MatX<S>;
template <typename S>
using MatX3 = geom::MatX3<S>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Vertex color statistics across views and frames
// ---------------------------------------------------------------------------

// Border-clamped bilinear sample of img [C,H,W] at continuous pixel
// coordinates; texel (r,c) sits at (c+0.5, r+0.5).
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> sample_bilinear(const Tensor<S>& img, S u, S v) {
  Index C = img.shape[0], H = img.shape[1], W = img.shape[2];
  S x = u - S(0.5), y = v - S(0.5);
  Index x0 = static_cast<Index>(std::floor(x)), y0 = static_cast<Index>(std::floor(y));
  S fx = x - static_cast<S>(x0), fy = y - static_cast<S>(y0);
  auto cx = [&](Index c) { return std::min(std::max(c, Index(0)), W - 1); };
  auto cy = [&](Index r) { return std::min(std::max(r, Index(0)), H - 1); };
  Index xa = cx(x0), xb = cx(x0 + 1), ya = cy(y0), yb = cy(y0 + 1);
  Eigen::Matrix<S, Eigen::Dynamic, 1> out(C);
  for (Index ch = 0; ch < C; ++ch) {
    const S* p = img.data.data() + ch * H * W;
    S top = p[ya * W + xa] * (S(1) - fx) + p[ya * W + xb] * fx;
    S bot = p[yb * W + xa] * (S(1) - fx) + p[yb * W + xb] * fx;
    out[ch] = top * (S(1) - fy) + bot * fy;
  }
  return out;
}

// Per-vertex color mean and population variance of the SR images, sampled at
// the projected vertex positions. Variance needs >= 2 views in some frame;
// vertices that never reach that are flagged ineligible (their U is 0).
template <typename S>
struct VertexStats {
  Tensor<S> mu;                // [V,3]
  Tensor<S> var;               // [V,3]
  Tensor<S> samples;           // [V] total visible samples over all views/frames
  std::vector<char> eligible;  // [V] some frame saw the vertex in >= 2 views
  Index excluded = 0;          // count of ineligible vertices

  Index num_vertices() const { return mu.shape.empty() ? 0 : mu.shape[0]; }
};

// Statistics for a single frame: mean/variance across that frame's views.
// images[k] pairs with cams[k]; verts are the posed fine-mesh vertices.
template <typename S>
VertexStats<S> frame_color_stats(const MatX3<S>& verts, const FaceMat& F,
                                 const std::vector<geom::Camera<S>>& cams,
                                 const std::vector<Tensor<S>>& images) {
  if (cams.empty() || cams.size() != images.size())
    throw ConfigError("vertex statistics need one image per camera");
  Index V = verts.rows();
  MatX<S> s1 = MatX<S>::Zero(V, 3), s2 = MatX<S>::Zero(V, 3);
  VertexStats<S> st;
  st.samples = Tensor<S>::zeros({V});
  for (std::size_t k = 0; k < cams.size(); ++k) {
    render::VertexProjection<S> vp = render::project_vertices<S>(verts, F, cams[k]);
    for (Index v = 0; v < V; ++v) {
      if (!vp.visible[static_cast<std::size_t>(v)]) continue;
      auto c = sample_bilinear<S>(images[k], vp.pixels(v, 0), vp.pixels(v, 1));
      s1.row(v) += c.transpose();
      s2.row(v) += c.array().square().matrix().transpose();
      st.samples.data[v] += S(1);
    }
  }
  st.mu = Tensor<S>::zeros({V, 3});
  st.var = Tensor<S>::zeros({V, 3});
  st.eligible.assign(static_cast<std::size_t>(V), 0);
  for (Index v = 0; v < V; ++v) {
    S n = st.samples.data[v];
    if (n < S(1)) {
      ++st.excluded;
      continue;
    }
    st.mu.mat(V, 3).row(v) = s1.row(v) / n;
    if (n >= S(2)) {
      // population variance E[c^2] - mu^2, clamped against rounding
      st.var.mat(V, 3).row(v) =
          (s2.row(v) / n - st.mu.mat(V, 3).row(v).array().square().matrix()).cwiseMax(S(0));
      st.eligible[static_cast<std::size_t>(v)] = 1;
    } else {
      ++st.excluded;
    }
  }
  return st;
}

// Full-set statistics: frame means and variances averaged over the frames in
// which the vertex met the two-view requirement. A vertex with no such frame
// keeps its best single-view mean (if any) but stays ineligible.
template <typename S>
VertexStats<S> vertex_color_stats(const std::vector<MatX3<S>>& posed, const FaceMat& F,
                                  const std::vector<std::vector<geom::Camera<S>>>& cams,
                                  const std::vector<std::vector<Tensor<S>>>& images) {
  if (posed.empty() || posed.size() != cams.size() || posed.size() != images.size())
    throw ConfigError("vertex statistics need matching frames, cameras, and images");
  Index V = posed[0].rows();
  VertexStats<S> out;
  out.mu = Tensor<S>::zeros({V, 3});
  out.var = Tensor<S>::zeros({V, 3});
  out.samples = Tensor<S>::zeros({V});
  out.eligible.assign(static_cast<std::size_t>(V), 0);
  MatX<S> mu2 = MatX<S>::Zero(V, 3), mu1 = MatX<S>::Zero(V, 3), va = MatX<S>::Zero(V, 3);
  VecX<S> n2 = VecX<S>::Zero(V), n1 = VecX<S>::Zero(V);
  for (std::size_t f = 0; f < posed.size(); ++f) {
    VertexStats<S> fs = frame_color_stats<S>(posed[f], F, cams[f], images[f]);
    for (Index v = 0; v < V; ++v) {
      out.samples.data[v] += fs.samples.data[v];
      if (fs.samples.data[v] < S(1)) continue;
      mu1.row(v) += fs.mu.mat(V, 3).row(v);
      n1[v] += S(1);
      if (fs.eligible[static_cast<std::size_t>(v)]) {
        mu2.row(v) += fs.mu.mat(V, 3).row(v);
        va.row(v) += fs.var.mat(V, 3).row(v);
        n2[v] += S(1);
      }
    }
  }
  for (Index v = 0; v < V; ++v) {
    if (n2[v] > S(0)) {
      out.mu.mat(V, 3).row(v) = mu2.row(v) / n2[v];
      out.var.mat(V, 3).row(v) = va.row(v) / n2[v];
      out.eligible[static_cast<std::size_t>(v)] = 1;
    } else if (n1[v] > S(0)) {
      out.mu.mat(V, 3).row(v) = mu1.row(v) / n1[v];
    }
  }
  for (char e : out.eligible) out.excluded += e ? 0 : 1;
  return out;
}

// ---------------------------------------------------------------------------
// Unconfidence map
// ---------------------------------------------------------------------------

// Per-vertex unconfidence in [0,1]: pose drift of the mean color since the
// previous round plus the channel-averaged view variance, clamped at u_max
// and rescaled. Ineligible vertices get 0.
template <typename S>
Tensor<S> unconfidence(const VertexStats<S>& cur, const VertexStats<S>& prev,
                       S u_max = S(0.5)) {
  Index V = cur.num_vertices();
  if (prev.num_vertices() != V)
    throw ConfigError("unconfidence needs statistics over the same vertex set");
  if (u_max <= S(0)) throw ConfigError("u_max must be positive");
  Tensor<S> U = Tensor<S>::zeros({V});
  for (Index v = 0; v < V; ++v) {
    if (!cur.eligible[static_cast<std::size_t>(v)]) continue;
    S drift = (cur.mu.mat(V, 3).row(v) - prev.mu.mat(V, 3).row(v)).norm();
    S vbar = cur.var.mat(V, 3).row(v).mean();
    U.data[v] = std::min(std::max(drift + vbar, S(0)), u_max) / u_max;
  }
  return U;
}

// Renders per-vertex U into a per-view weight image [1,H,W]. Background stays
// 0; `floor` optionally lifts covered pixels to a minimum weight so
// low-unconfidence regions keep a little supervision.
template <typename S>
Tensor<S> unconfidence_image(const Tensor<S>& U, const MatX3<S>& verts, const FaceMat& F,
                             const geom::Camera<S>& cam, S floor = S(0)) {
  render::RasterResult<S> ras = render::rasterize_mesh<S>(verts, F, cam);
  MatX<S> attr(U.shape[0], 1);
  attr.col(0) = U.mat(U.shape[0], 1).col(0);
  Tensor<S> img = render::interpolate_attr<S>(ras, F, attr);
  if (floor > S(0)) {
    for (Index px = 0; px < ras.height * ras.width; ++px)
      if (ras.face[static_cast<std::size_t>(px)] >= 0)
        img.data[px] = std::max(img.data[px], floor);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Fine-tuning losses
// ---------------------------------------------------------------------------

// Mean over all pixels of U * |I_sr - R|; the weight multiplies both images,
// which is the same as weighting their difference.
template <typename S>
Var<S> consistency_loss(Tape<S>& tape, const Tensor<S>& avatar_render, Var<S> i_sr,
                        const Tensor<S>& u_img) {
  if (i_sr.shape() != avatar_render.shape)
    throw ConfigError("consistency loss needs aligned images");
  Index C = i_sr.shape()[0], H = i_sr.shape()[1], W = i_sr.shape()[2];
  if (u_img.shape != Shape{1, H, W}) throw ConfigError("weight map must be [1,H,W]");
  Tensor<S> w3({C, H, W});
  for (Index c = 0; c < C; ++c) w3.data.segment(c * H * W, H * W) = u_img.data;
  Var<S> diff = i_sr - make_const(tape, avatar_render);
  return mean(abs_op(diff) * make_const(tape, w3));
}

// Pads odd image sides by replicating the border row/column so both sides are
// even (single-level DWT needs 2x2 blocks).
template <typename S>
Var<S> pad_edge_even(Var<S> x) {
  Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Index H2 = H + (H % 2), W2 = W + (W % 2);
  if (H2 == H && W2 == W) return x;
  std::vector<Index> idx(static_cast<std::size_t>(H2 * W2));
  for (Index r = 0; r < H2; ++r)
    for (Index c = 0; c < W2; ++c)
      idx[static_cast<std::size_t>(r * W2 + c)] = std::min(r, H - 1) * W + std::min(c, W - 1);
  return reshape_op(gather_cols(reshape_op(x, {C, H * W}), std::move(idx)), {C, H2, W2});
}

// L1 between low-pass subbands plus L1 between the elementwise sums of the
// three high-pass subbands of a single-level orthonormal Haar transform,
// anchoring the current SR image to the initial one.
template <typename S>
Var<S> wavelet_loss(Tape<S>& tape, Var<S> cur, const Tensor<S>& init) {
  if (cur.shape() != init.shape) throw ConfigError("wavelet loss needs equal image sizes");
  Index C = cur.shape()[0];
  Var<S> wc = haar2(pad_edge_even(cur));
  Var<S> wi = haar2(pad_edge_even(make_const(tape, init)));
  auto high = [C](Var<S> w) {
    return slice_lead(w, C, 2 * C) + slice_lead(w, 2 * C, 3 * C) + slice_lead(w, 3 * C, 4 * C);
  };
  return loss::l1_all(slice_lead(wc, 0, C), slice_lead(wi, 0, C)) +
         loss::l1_all(high(wc), high(wi));
}

// log(1 - D(I_sr)) with D's output clamped away from {0,1}. Minimizing pushes
// D(I_sr) toward 1; D itself stays frozen (bind with trainable = false).
template <typename S>
Var<S> disc_loss(giif::Discriminator<S>& disc, nn::Bound<S>& b, Var<S> i_sr) {
  Var<S> d = clamp(disc(b, i_sr, /*update_u=*/false), S(1e-6), S(1) - S(1e-6));
  return log_op(add_scalar(neg(d), S(1)));
}

template <typename S>
struct AftWeights {
  S consistency = 1, wavelet = 1, realism = 1;
};

// Weighted sum of the three fine-tuning terms (defaults are the plain sum).
template <typename S>
Var<S> aft_total(Tape<S>& tape, Var<S> cons, Var<S> wave, Var<S> realism,
                 const AftWeights<S>& w = {},
                 std::vector<loss::TermReport<S>>* report = nullptr) {
  return loss::weighted_total<S>(
      tape, {{"consistency", cons}, {"wavelet", wave}, {"realism", realism}},
      {w.consistency, w.wavelet, w.realism}, report);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct FinetuneSchedule {
  Index epochs = 10;      // avatar epochs
  Index fine_steps = 3;   // decoder updates per fine-tune round
  Index fine_every = 2;   // epoch stride between rounds
  Index fine_start = -1;  // first eligible epoch; -1 resolves to epochs/2

  Index resolved_start() const { return fine_start >= 0 ? fine_start : epochs / 2; }
  bool fine_round(Index t) const { return t >= resolved_start() && t % fine_every == 0; }
  void validate() const {
    if (epochs < 0 || fine_steps < 0) throw ConfigError("schedule lengths must be >= 0");
    if (fine_every < 1) throw ConfigError("fine-tune interval must be >= 1");
    if (resolved_start() > epochs)
      throw ConfigError("fine-tune start epoch lies beyond the last epoch");
  }
};

template <typename S>
struct PipelineConfig {
  S lr_avatar = S(1e-3);
  S lr_decoder = S(1e-5);
  S w_rgb = 1;
  S lambda_perc = S(0.1);     // perceptual share inside the photometric term
  S w_lap_albedo = 1;
  S w_lap_disp = 1;
  S w_edge = 1;
  S lambda_mean_tex = S(0.1);
  std::vector<S> part_weights;  // per-joint, empty = all 1
  AftWeights<S> aft;
  S u_max = S(0.5);
  S u_floor = S(0);            // minimum consistency weight inside the silhouette
  S divergence_factor = S(10);
};

struct PipelineEvent {
  Index epoch = 0;
  std::string kind;  // "avatar" | "finetune" | "regenerate" | "carry"
};

template <typename S>
struct EpochLog {
  Index epoch = 0;
  S l3d = 0;
  std::vector<loss::TermReport<S>> l3d_terms;
  S l_aft = 0;  // mean over the round's inner steps; 0 outside rounds
  std::vector<loss::TermReport<S>> aft_terms;
};

template <typename S>
struct PipelineResult {
  std::vector<PipelineEvent> events;
  std::vector<EpochLog<S>> log;
  std::vector<std::vector<Tensor<S>>> i_sr;  // current SR image per [frame][view]
  VertexStats<S> stats;                      // from the last fine-tune round
  Index rounds = 0;
};

// Called after every regeneration (round 0 = the initial SR pass) so callers
// can persist per-round artifacts.
template <typename S>
using RoundSink = std::function<void(Index round, const PipelineResult<S>&)>;

namespace detail {

// One avatar optimization step over all frames. Each frame gets its own tape
// (memory stays bounded by one frame's render graph); gradients accumulate
// into a single Adam update. Returns the epoch's mean total.
template <typename S>
S avatar_epoch(const scene::Scene<S>& sc, avatar::EmbeddingNets<S>& nets,
               const std::vector<std::vector<Tensor<S>>>& i_sr,
               const std::vector<geom::Pose<S>>& all_poses,
               const Eigen::SparseMatrix<S>& A, const Eigen::SparseMatrix<S>& D,
               const Tensor<S>& ref_len, const Tensor<S>& phi_vert,
               const loss::Perceptual<S>& perc, const PipelineConfig<S>& cfg,
               nn::Adam<S>& opt, EpochLog<S>& log) {
  const geom::SkinnedTemplate<S>& tpl = sc.tpl;
  Index V = tpl.num_vertices();
  S nf = static_cast<S>(sc.frames.size());
  Tensor<S> light({9, 3});
  light.mat(9, 3) = sc.light;
  std::map<std::string, Tensor<S>> grads;
  S total = 0;
  std::vector<loss::TermReport<S>> acc;
  for (std::size_t f = 0; f < sc.frames.size(); ++f) {
    const scene::FrameData<S>& frame = sc.frames[f];
    Tape<S> tape;
    nn::Bound<S> b = nn::bind(tape, nets.params, true);
    avatar::FineMesh<S> fm = avatar::pose_fine(tape, b, nets, tpl, frame.pose);
    Var<S> rho_bar = detach(avatar::mean_albedo(tape, b, nets, all_poses));
    Var<S> Y = make_const(tape, light);
    Var<S> shaded = render::sh_shade(fm.albedo, fm.normals, Y);
    Var<S> mean_shaded = render::sh_shade(rho_bar, fm.normals, Y);
    MatX3<S> verts_now = fm.verts.val().mat(V, 3);
    Var<S> rgb, mt;
    for (std::size_t v = 0; v < frame.views.size(); ++v) {
      const scene::ViewData<S>& view = frame.views[v];
      render::RasterResult<S> ras = render::rasterize_mesh<S>(verts_now, tpl.faces, view.cam);
      Var<S> target = make_const(tape, i_sr[f][v]);
      Var<S> img = render::rasterize_attr(shaded, fm.verts, ras, tpl.faces, view.cam);
      Var<S> term = loss::l_rgb(tape, img, target, ras.mask, cfg.lambda_perc, perc);
      Var<S> mimg = render::rasterize_attr(mean_shaded, fm.verts, ras, tpl.faces, view.cam);
      Var<S> mterm = loss::mean_texture_loss(tape, mimg, target, perc);
      rgb = v == 0 ? term : rgb + term;
      mt = v == 0 ? mterm : mt + mterm;
    }
    S nv = static_cast<S>(frame.views.size());
    rgb = scale(rgb, S(1) / nv);
    mt = scale(mt, S(1) / nv);
    std::vector<loss::TermReport<S>> rep;
    Var<S> frame_total = loss::weighted_total<S>(
        tape,
        {{"rgb", rgb},
         {"lap_albedo", loss::part_laplacian(fm.albedo, A, phi_vert)},
         {"lap_disp", loss::part_laplacian(fm.pred.disp, A, phi_vert)},
         {"edge", loss::edge_loss(fm.verts, D, ref_len)},
         {"mean_tex", mt}},
        {cfg.w_rgb, cfg.w_lap_albedo, cfg.w_lap_disp, cfg.w_edge, cfg.lambda_mean_tex}, &rep);
    total += frame_total.val().data[0];
    if (acc.empty()) {
      acc = rep;
    } else {
      for (std::size_t i = 0; i < rep.size(); ++i) acc[i].value += rep[i].value;
    }
    tape.backward(scale(frame_total, S(1) / nf).id);
    nn::Adam<S>::collect_grads(b, grads);
  }
  for (auto& r : acc) r.value /= nf;
  log.l3d_terms = acc;
  opt.step_grads(nets.params, grads);
  return total / nf;
}

}  // namespace detail

// Joint reconstruction loop. Control flow per epoch t = 1..epochs:
//   - one avatar step on the 3D loss against the current SR images
//   - on scheduled rounds: vertex statistics -> unconfidence maps, then
//     `fine_steps` decoder-only SR updates, then regenerate every SR image
//   - otherwise the SR images carry over unchanged
// The event log records exactly this sequence (epoch 0 = the initial SR
// pass). Aborts with DivergenceError when the 3D loss exceeds
// divergence_factor times its first-epoch value.
template <typename S>
PipelineResult<S> run_pipeline(const scene::Scene<S>& sc, giif::GiifModel<S>& model,
                               giif::Discriminator<S>* disc, avatar::EmbeddingNets<S>& nets,
                               const FinetuneSchedule& sched, const PipelineConfig<S>& cfg,
                               const RoundSink<S>& sink = {}) {
  sched.validate();
  if (sc.frames.empty()) throw ConfigError("pipeline needs at least one frame");
  const geom::SkinnedTemplate<S>& tpl = sc.tpl;
  Index V = tpl.num_vertices(), J = tpl.num_joints();
  std::vector<S> phi = cfg.part_weights;
  if (phi.empty()) phi.assign(static_cast<std::size_t>(J), S(1));
  if (static_cast<Index>(phi.size()) != J)
    throw ConfigError("part weight count does not match the joint count");
  std::vector<Index> part(tpl.part.begin(), tpl.part.end());
  Tensor<S> phi_vert = loss::per_vertex_weights<S>(part, phi);
  Eigen::SparseMatrix<S> A = loss::uniform_laplacian<S>(tpl.faces, V);
  auto edges = geom::mesh_edges(tpl.faces);
  Eigen::SparseMatrix<S> D = loss::edge_difference_matrix<S>(edges, V);
  Tensor<S> ref_len({static_cast<Index>(edges.size())});
  for (std::size_t e = 0; e < edges.size(); ++e)
    ref_len.data[static_cast<Index>(e)] =
        (tpl.vertices.row(edges[e].first) - tpl.vertices.row(edges[e].second)).norm();

  std::vector<geom::Pose<S>> all_poses;
  for (const auto& f : sc.frames) all_poses.push_back(f.pose);

  loss::Perceptual<S> perc;
  nn::Adam<S> opt_avatar(cfg.lr_avatar), opt_dec(cfg.lr_decoder);

  PipelineResult<S> res;
  res.i_sr.resize(sc.frames.size());

  auto regenerate = [&](Index epoch) {
    for (std::size_t f = 0; f < sc.frames.size(); ++f) {
      res.i_sr[f].resize(sc.frames[f].views.size());
      for (std::size_t v = 0; v < sc.frames[f].views.size(); ++v) {
        const scene::ViewData<S>& view = sc.frames[f].views[v];
        res.i_sr[f][v] = model.super_resolve(view.lr, view.normal_lr,
                                             view.lr.shape[1] * sc.upscale,
                                             view.lr.shape[2] * sc.upscale);
      }
    }
    res.events.push_back({epoch, "regenerate"});
  };

  regenerate(0);
  std::vector<std::vector<Tensor<S>>> i_sr_init = res.i_sr;
  if (sink) sink(0, res);

  VertexStats<S> prev_stats;
  bool has_prev = false;
  S baseline = std::numeric_limits<S>::quiet_NaN();

  for (Index t = 1; t <= sched.epochs; ++t) {
    EpochLog<S> log;
    log.epoch = t;
    log.l3d = detail::avatar_epoch<S>(sc, nets, res.i_sr, all_poses, A, D, ref_len, phi_vert,
                                      perc, cfg, opt_avatar, log);
    res.events.push_back({t, "avatar"});
    if (!std::isfinite(baseline)) baseline = log.l3d;
    if (log.l3d > cfg.divergence_factor * baseline) {
      std::string dump = "3D loss diverged at epoch " + std::to_string(t) + ": " +
                         std::to_string(log.l3d) + " vs baseline " + std::to_string(baseline);
      for (const auto& r : log.l3d_terms)
        dump += "; " + r.name + "=" + std::to_string(r.value);
      throw DivergenceError(dump);
    }

    if (sched.fine_round(t)) {
      // round-constant inputs: posed meshes, statistics, renders, U maps
      std::vector<MatX3<S>> posed(sc.frames.size());
      std::vector<avatar::AvatarValues<S>> av(sc.frames.size());
      std::vector<std::vector<geom::Camera<S>>> cams(sc.frames.size());
      for (std::size_t f = 0; f < sc.frames.size(); ++f) {
        av[f] = avatar::evaluate(nets, tpl, sc.frames[f].pose);
        posed[f] = av[f].verts.mat(V, 3);
        for (const auto& view : sc.frames[f].views) cams[f].push_back(view.cam);
      }
      res.stats = vertex_color_stats<S>(posed, tpl.faces, cams, res.i_sr);
      Tensor<S> U = unconfidence<S>(res.stats, has_prev ? prev_stats : res.stats, cfg.u_max);

      std::vector<std::vector<Tensor<S>>> renders(sc.frames.size()), umaps(sc.frames.size());
      for (std::size_t f = 0; f < sc.frames.size(); ++f) {
        MatX<S> shaded = render::shade_sh_plain<S>(av[f].albedo.mat(V, 3),
                                                   av[f].normals.mat(V, 3), sc.light);
        MatX<S> uattr(V, 1);
        uattr.col(0) = U.mat(V, 1).col(0);
        for (const auto& view : sc.frames[f].views) {
          render::RasterResult<S> ras = render::rasterize_mesh<S>(posed[f], tpl.faces, view.cam);
          renders[f].push_back(render::interpolate_attr<S>(ras, tpl.faces, shaded));
          Tensor<S> uimg = render::interpolate_attr<S>(ras, tpl.faces, uattr);
          if (cfg.u_floor > S(0)) {
            for (Index px = 0; px < ras.height * ras.width; ++px)
              if (ras.face[static_cast<std::size_t>(px)] >= 0)
                uimg.data[px] = std::max(uimg.data[px], cfg.u_floor);
          }
          umaps[f].push_back(std::move(uimg));
        }
      }

      S npairs = 0;
      for (const auto& fr : sc.frames) npairs += static_cast<S>(fr.views.size());
      S aft_sum = 0;
      for (Index s = 0; s < sched.fine_steps; ++s) {
        std::map<std::string, Tensor<S>> grads;
        S step_total = 0;
        std::vector<loss::TermReport<S>> acc;
        for (std::size_t f = 0; f < sc.frames.size(); ++f) {
          for (std::size_t v = 0; v < sc.frames[f].views.size(); ++v) {
            const scene::ViewData<S>& view = sc.frames[f].views[v];
            Index H = view.lr.shape[1] * sc.upscale, W = view.lr.shape[2] * sc.upscale;
            Tape<S> td;
            nn::Bound<S> bdec = nn::bind_prefix(td, model.params, "dec.");
            giif::LatentGrid<S> grid = model.prepare(td, bdec, view.lr, view.normal_lr);
            Tensor<S> coords = giif::grid_coords<S>(H, W);
            Tensor<S> cell = giif::cell_for<S>(H * W, H, W);
            Var<S> img = reshape_op(
                model.query_rgb(td, bdec, grid, coords, cell, /*training=*/true), {3, H, W});
            Var<S> cons = consistency_loss(td, renders[f][v], img, umaps[f][v]);
            Var<S> wave = wavelet_loss(td, img, i_sr_init[f][v]);
            Var<S> realism;
            nn::Bound<S> bd;
            if (disc) {
              bd = nn::bind(td, disc->params, false);
              realism = disc_loss(*disc, bd, img);
            } else {
              realism = make_const(td, Tensor<S>::scalar(S(0)));
            }
            std::vector<loss::TermReport<S>> rep;
            Var<S> pair_total = aft_total(td, cons, wave, realism, cfg.aft, &rep);
            step_total += pair_total.val().data[0];
            if (acc.empty()) {
              acc = rep;
            } else {
              for (std::size_t i = 0; i < rep.size(); ++i) acc[i].value += rep[i].value;
            }
            td.backward(scale(pair_total, S(1) / npairs).id);
            nn::Adam<S>::collect_grads(bdec, grads);
          }
        }
        opt_dec.step_grads(model.params, grads);
        res.events.push_back({t, "finetune"});
        aft_sum += step_total / npairs;
        for (auto& r : acc) r.value /= npairs;
        log.aft_terms = acc;  // last inner step's breakdown
      }
      if (sched.fine_steps > 0) log.l_aft = aft_sum / static_cast<S>(sched.fine_steps);
      regenerate(t);
      prev_stats = res.stats;
      has_prev = true;
      ++res.rounds;
      res.log.push_back(log);
      if (sink) sink(res.rounds, res);
      continue;
    }
    res.events.push_back({t, "carry"});
    res.log.push_back(log);
  }
  return res;
}

}  // namespace srhand::ft
