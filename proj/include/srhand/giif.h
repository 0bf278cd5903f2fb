#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/image_ops.h"
#include "srhand/losses.h"
#include "srhand/nn.h"

namespace srhand::giif {

// ---------------------------------------------------------------------------
// Coordinate convention: pixel (i,j) of an H x W grid sits at normalized
// position (-1 + (2i+1)/H, -1 + (2j+1)/W), first component along height.
// A query carries its output-pixel footprint ("cell") [2/H_out, 2/W_out].
// ---------------------------------------------------------------------------

template <typename S>
S latent_coord(Index i, Index n) {
  return S(-1) + (S(2) * static_cast<S>(i) + S(1)) / static_cast<S>(n);
}

// Full row-major pixel-center grid, [H*W, 2].
template <typename S>
Tensor<S> grid_coords(Index H, Index W) {
  Tensor<S> out({H * W, 2});
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      out.data[(i * W + j) * 2 + 0] = latent_coord<S>(i, H);
      out.data[(i * W + j) * 2 + 1] = latent_coord<S>(j, W);
    }
  return out;
}

template <typename S>
Tensor<S> cell_for(Index Q, Index Hout, Index Wout) {
  Tensor<S> out({Q, 2});
  for (Index q = 0; q < Q; ++q) {
    out.data[q * 2 + 0] = S(2) / static_cast<S>(Hout);
    out.data[q * 2 + 1] = S(2) / static_cast<S>(Wout);
  }
  return out;
}

struct GiifConfig {
  Index c_img = 64;
  Index c_n = 32;
  bool use_normal = true;
  bool local_ensemble = true;
  bool feat_unfold = true;
  bool cell_decode = true;
  std::vector<Index> decoder_hidden = {256, 256, 256, 256};
  Index tile = 4096;  // queries per inference tile

  Index fused_channels() const { return c_img + (use_normal ? c_n : 0); }
  Index decoder_in() const {
    return fused_channels() * (feat_unfold ? 9 : 1) + 2 + (cell_decode ? 2 : 0);
  }
};

// Fused latent grid plus its spatial dims, ready for point queries.
template <typename S>
struct LatentGrid {
  Var<S> feat;  // [(9·)C, h, w]
  Index h = 0, w = 0;
};

template <typename S>
struct GiifModel {
  GiifConfig cfg;
  nn::Params<S> params;

  explicit GiifModel(GiifConfig c = {}) : cfg(c) {}

  // Residual-dense lite image encoder: 3 blocks of two growth convs with
  // dense concatenation and a 1x1 fuse, plus a global residual.
  static constexpr int kBlocks = 3;
  Index growth() const { return std::max<Index>(cfg.c_img / 2, 4); }

  void init(Rng& rng) {
    Index C = cfg.c_img, G = growth();
    nn::Conv<S>{"enc_img.c0", 3, C, 3}.init(params, rng);
    for (int k = 0; k < kBlocks; ++k) {
      std::string b = "enc_img.b" + std::to_string(k);
      nn::Conv<S>{b + ".c1", C, G, 3}.init(params, rng);
      nn::Conv<S>{b + ".c2", C + G, G, 3}.init(params, rng);
      nn::Conv<S>{b + ".fuse", C + 2 * G, C, 1}.init(params, rng);
    }
    nn::Conv<S>{"enc_img.out", C, C, 3}.init(params, rng);
    if (cfg.use_normal) {
      Index N = cfg.c_n;
      nn::Conv<S>{"enc_n.in", 3, N, 3}.init(params, rng);
      nn::Conv<S>{"enc_n.d1", N, N, 3}.init(params, rng);
      nn::Conv<S>{"enc_n.d2", N, N, 3}.init(params, rng);
      nn::Conv<S>{"enc_n.u1", N, N, 3}.init(params, rng);
      nn::Conv<S>{"enc_n.u0", N, N, 3}.init(params, rng);
      nn::Conv<S>{"enc_n.out", N, N, 3}.init(params, rng);
    }
    decoder().init(params, rng);
  }

  nn::Mlp<S> decoder() const {
    std::vector<Index> dims;
    dims.push_back(cfg.decoder_in());
    dims.insert(dims.end(), cfg.decoder_hidden.begin(), cfg.decoder_hidden.end());
    dims.push_back(3);
    return nn::Mlp<S>{"dec", dims};
  }

  Var<S> encode_image(const nn::Bound<S>& b, Var<S> img) const {
    if (!img.val().all_finite()) throw ConfigError("encoder input has non-finite values");
    if (img.shape()[1] < 8 || img.shape()[2] < 8)
      throw ConfigError("encoder input must be at least 8x8");
    Index C = cfg.c_img, G = growth();
    Var<S> x0 = nn::Conv<S>{"enc_img.c0", 3, C, 3}(b, img);
    Var<S> x = x0;
    for (int k = 0; k < kBlocks; ++k) {
      std::string bl = "enc_img.b" + std::to_string(k);
      Var<S> y1 = relu(nn::Conv<S>{bl + ".c1", C, G, 3}(b, x));
      Var<S> y2 = relu(nn::Conv<S>{bl + ".c2", C + G, G, 3}(b, vcat(x, y1)));
      x = x + nn::Conv<S>{bl + ".fuse", C + 2 * G, C, 1}(b, vcat(vcat(x, y1), y2));
    }
    return nn::Conv<S>{"enc_img.out", C, C, 3}(b, x) + x0;
  }

  // Hourglass-lite normal encoder: two downsamplings with additive skips.
  // Odd input sizes are zero-padded to a multiple of 4 and cropped back.
  Var<S> encode_normal(Tape<S>& tape, const nn::Bound<S>& b, const Tensor<S>& nmap) const {
    if (!nmap.all_finite()) throw ConfigError("normal-map input has non-finite values");
    Index h = nmap.shape[1], w = nmap.shape[2];
    Index hp = (h + 3) / 4 * 4, wp = (w + 3) / 4 * 4;
    Var<S> in = make_const(tape, (hp == h && wp == w) ? nmap : pad_to(nmap, hp, wp));
    Index N = cfg.c_n;
    Var<S> e0 = relu(nn::Conv<S>{"enc_n.in", 3, N, 3}(b, in));
    Var<S> d1 = relu(nn::Conv<S>{"enc_n.d1", N, N, 3}(b, avgpool2(e0)));
    Var<S> d2 = relu(nn::Conv<S>{"enc_n.d2", N, N, 3}(b, avgpool2(d1)));
    Var<S> u1 = relu(nn::Conv<S>{"enc_n.u1", N, N, 3}(b, upsample_nearest2(d2) + d1));
    Var<S> u0 = relu(nn::Conv<S>{"enc_n.u0", N, N, 3}(b, upsample_nearest2(u1) + e0));
    Var<S> out = nn::Conv<S>{"enc_n.out", N, N, 3}(b, u0);
    if (hp != h || wp != w) out = crop2d(out, h, w);
    return out;
  }

  // Channel concatenation, image features first.
  Var<S> fuse(Var<S> z_img, Var<S> z_n) const {
    if (z_img.shape()[1] != z_n.shape()[1] || z_img.shape()[2] != z_n.shape()[2])
      throw ConfigError("latent grids disagree on spatial dims");
    return vcat(z_img, z_n);
  }

  // Encode + fuse + optional 3x3 unfolding; the result feeds any number of
  // query batches.
  LatentGrid<S> prepare(Tape<S>& tape, const nn::Bound<S>& b, const Tensor<S>& lr,
                        const Tensor<S>& normal_lr) const {
    Var<S> z = encode_image(b, make_const(tape, lr));
    if (cfg.use_normal) {
      if (normal_lr.shape != Shape{3, lr.shape[1], lr.shape[2]})
        throw ConfigError("normal map resolution does not match the LR image");
      z = fuse(z, encode_normal(tape, b, normal_lr));
    }
    if (cfg.feat_unfold) z = unfold3x3(z);
    return {z, lr.shape[1], lr.shape[2]};
  }

  // Decode colors at continuous positions. Local ensemble: the 4 nearest
  // latent centers each decode the query, blended by the diagonally opposite
  // rectangle areas (normalized). Relative coords and cells are scaled by the
  // latent grid dims before entering the MLP.
  Var<S> query_rgb(Tape<S>& tape, const nn::Bound<S>& b, const LatentGrid<S>& grid,
                   const Tensor<S>& coords, const Tensor<S>& cell, bool training) const {
    Index Q = coords.shape[0];
    if (Q == 0) throw ConfigError("empty query set");
    Index h = grid.h, w = grid.w;
    Index Cf = grid.feat.shape()[0];
    Var<S> flat = reshape_op(grid.feat, {Cf, h * w});
    nn::Mlp<S> dec = decoder();

    int corners = cfg.local_ensemble ? 4 : 1;
    // per-corner gather indices, relative inputs, and raw ensemble areas
    std::vector<std::vector<Index>> idx(static_cast<std::size_t>(corners));
    std::vector<Tensor<S>> rels;
    std::vector<Tensor<S>> areas;
    Index extra = 2 + (cfg.cell_decode ? 2 : 0);
    for (int s = 0; s < corners; ++s) {
      idx[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(Q));
      rels.push_back(Tensor<S>({extra, Q}));
      areas.push_back(Tensor<S>({Q}));
    }
    for (Index q = 0; q < Q; ++q) {
      S xh = coords.data[q * 2 + 0], xw = coords.data[q * 2 + 1];
      S ph = (xh + S(1)) / S(2) * static_cast<S>(h) - S(0.5);
      S pw = (xw + S(1)) / S(2) * static_cast<S>(w) - S(0.5);
      for (int s = 0; s < corners; ++s) {
        Index ih, iw;
        if (cfg.local_ensemble) {
          ih = static_cast<Index>(std::floor(ph)) + (s >> 1);
          iw = static_cast<Index>(std::floor(pw)) + (s & 1);
        } else {
          ih = static_cast<Index>(std::floor(ph + S(0.5)));
          iw = static_cast<Index>(std::floor(pw + S(0.5)));
        }
        ih = std::clamp<Index>(ih, 0, h - 1);
        iw = std::clamp<Index>(iw, 0, w - 1);
        idx[static_cast<std::size_t>(s)][static_cast<std::size_t>(q)] = ih * w + iw;
        S rh = (xh - latent_coord<S>(ih, h)) * static_cast<S>(h);
        S rw = (xw - latent_coord<S>(iw, w)) * static_cast<S>(w);
        Tensor<S>& rel = rels[static_cast<std::size_t>(s)];
        rel.data[0 * Q + q] = rh;
        rel.data[1 * Q + q] = rw;
        if (cfg.cell_decode) {
          rel.data[2 * Q + q] = cell.data[q * 2 + 0] * static_cast<S>(h);
          rel.data[3 * Q + q] = cell.data[q * 2 + 1] * static_cast<S>(w);
        }
        areas[static_cast<std::size_t>(s)].data[q] = std::abs(rh * rw) + S(1e-9);
      }
    }

    Var<S> acc = make_const(tape, Tensor<S>::zeros({3, Q}));
    for (int s = 0; s < corners; ++s) {
      Var<S> feats = gather_cols(flat, idx[static_cast<std::size_t>(s)]);
      Var<S> input = vcat(feats, make_const(tape, rels[static_cast<std::size_t>(s)]));
      Var<S> out = dec(b, input);
      if (cfg.local_ensemble) {
        // weight of corner s = area spanned to the diagonally opposite corner
        Tensor<S> wgt({Q});
        int opp = 3 - s;
        for (Index q = 0; q < Q; ++q) {
          S total = 0;
          for (int s2 = 0; s2 < 4; ++s2) total += areas[static_cast<std::size_t>(s2)].data[q];
          wgt.data[q] = areas[static_cast<std::size_t>(opp)].data[q] / total;
        }
        out = mul_rowvec(out, make_const(tape, wgt));
      }
      acc = s == 0 ? out : acc + out;
    }
    return training ? clamp(acc, S(-1e3), S(1e3)) : clamp(acc, S(0), S(1));
  }

  // Full-image inference at arbitrary output size, tiled to bound memory.
  // The latent grid is computed once; each tile decodes on its own tape.
  Tensor<S> super_resolve(const Tensor<S>& lr, const Tensor<S>& normal_lr, Index Hout,
                          Index Wout) const {
    if (Hout < lr.shape[1] || Wout < lr.shape[2])
      throw ConfigError("output size must be at least the input size");
    Tensor<S> feat_value;
    Index h = 0, w = 0;
    {
      Tape<S> enc_tape;
      nn::Bound<S> b = nn::bind(enc_tape, params, false);
      LatentGrid<S> grid = prepare(enc_tape, b, lr, normal_lr);
      feat_value = grid.feat.val();
      h = grid.h;
      w = grid.w;
    }
    Tensor<S> coords = grid_coords<S>(Hout, Wout);
    Tensor<S> out({3, Hout, Wout});
    Index total = Hout * Wout;
    for (Index q0 = 0; q0 < total; q0 += cfg.tile) {
      Index q1 = std::min(total, q0 + cfg.tile);
      Tensor<S> tc({q1 - q0, 2});
      tc.data = coords.data.segment(q0 * 2, (q1 - q0) * 2);
      Tensor<S> cell = cell_for<S>(q1 - q0, Hout, Wout);
      Tape<S> tile_tape;
      nn::Bound<S> b = nn::bind(tile_tape, params, false);
      LatentGrid<S> grid{make_const(tile_tape, feat_value), h, w};
      Tensor<S> colors = query_rgb(tile_tape, b, grid, tc, cell, false).val();
      for (Index c = 0; c < 3; ++c)
        out.data.segment(c * total + q0, q1 - q0) = colors.data.segment(c * (q1 - q0), q1 - q0);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// U-shaped discriminator with spectral-normalized convs; outputs the mean
// sigmoid realness over the logit map, strictly inside (0,1).
// ---------------------------------------------------------------------------

template <typename S>
struct Discriminator {
  Index feat = 16;
  nn::Params<S> params;

  void init(Rng& rng) {
    Index F = feat;
    nn::SpectralConv<S>{"d.e0", 3, F, 3}.init(params, rng);
    nn::SpectralConv<S>{"d.e1", F, 2 * F, 3}.init(params, rng);
    nn::SpectralConv<S>{"d.mid", 2 * F, 2 * F, 3}.init(params, rng);
    nn::SpectralConv<S>{"d.u1", 4 * F, F, 3}.init(params, rng);
    nn::SpectralConv<S>{"d.u0", 2 * F, F, 3}.init(params, rng);
    nn::SpectralConv<S>{"d.out", F, 1, 3}.init(params, rng);
  }

  Var<S> operator()(nn::Bound<S>& b, Var<S> img, bool update_u) {
    if (img.shape()[1] % 4 || img.shape()[2] % 4)
      throw ConfigError("discriminator input dims must be divisible by 4");
    Index F = feat;
    S sl = S(0.2);
    auto sc = [&](const std::string& n, Index ci, Index co, Var<S> x) {
      return nn::SpectralConv<S>{n, ci, co, 3}(params, b, x, update_u);
    };
    Var<S> e0 = leaky_relu(sc("d.e0", 3, F, img), sl);
    Var<S> e1 = leaky_relu(sc("d.e1", F, 2 * F, avgpool2(e0)), sl);
    Var<S> m = leaky_relu(sc("d.mid", 2 * F, 2 * F, avgpool2(e1)), sl);
    Var<S> u1 = leaky_relu(sc("d.u1", 4 * F, F, vcat(upsample_nearest2(m), e1)), sl);
    Var<S> u0 = leaky_relu(sc("d.u0", 2 * F, F, vcat(upsample_nearest2(u1), e0)), sl);
    return mean(sigmoid(sc("d.out", F, 1, u0)));
  }
};

// ---------------------------------------------------------------------------
// Training: LIIF-style paired patches. A sample carries the LR patch, its
// conditioning normal map, HR query coordinates and target colors; grid_h/w
// are set when the coords form the full row-major patch grid (needed by the
// perceptual and adversarial terms, which see images).
// ---------------------------------------------------------------------------

template <typename S>
struct TrainItem {
  Tensor<S> lr;
  Tensor<S> normal;
  Tensor<S> coords;
  Tensor<S> cell;
  Tensor<S> target;  // [3,Q]
  Index grid_h = 0, grid_w = 0;
};

// Plain data crop of a [C,H,W] tensor.
template <typename S>
Tensor<S> crop_image(const Tensor<S>& img, Index r0, Index c0, Index h, Index w) {
  Index C = img.shape[0], H = img.shape[1], W = img.shape[2];
  Tensor<S> out({C, h, w});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < h; ++r)
      out.data.segment((c * h + r) * w, w) = img.data.segment((c * H + r0 + r) * W + c0, w);
  (void)H;
  return out;
}

// Unit-normalize pixels that carry a normal, zero the rest (resampling and
// 8-bit storage denormalize slightly).
template <typename S>
void renormalize_normal_image(Tensor<S>& nmap, S min_len = S(0.1)) {
  Index HW = nmap.shape[1] * nmap.shape[2];
  for (Index p = 0; p < HW; ++p) {
    S x = nmap.data[p], y = nmap.data[HW + p], z = nmap.data[2 * HW + p];
    S len = std::sqrt(x * x + y * y + z * z);
    S f = len > min_len ? S(1) / len : S(0);
    nmap.data[p] = x * f;
    nmap.data[HW + p] = y * f;
    nmap.data[2 * HW + p] = z * f;
  }
}

// Cut a random HR patch, synthesize its LR counterpart by bicubic downscale,
// and attach either the full HR pixel grid or a random coordinate subset.
template <typename S>
TrainItem<S> make_train_item(const Tensor<S>& hr, const Tensor<S>& normal_hr, Index lr_patch,
                             S scale_factor, Rng& rng, bool full_grid, Index q_subset = 1024) {
  Index H = hr.shape[1], W = hr.shape[2];
  Index p_hr = static_cast<Index>(std::lround(static_cast<double>(lr_patch) * scale_factor));
  if (p_hr > H || p_hr > W) throw ConfigError("training patch larger than the HR image");
  Index r0 = rng.uniform_int(0, H - p_hr);
  Index c0 = rng.uniform_int(0, W - p_hr);
  Tensor<S> hr_crop = crop_image(hr, r0, c0, p_hr, p_hr);
  Tensor<S> n_crop = crop_image(normal_hr, r0, c0, p_hr, p_hr);

  TrainItem<S> item;
  item.lr = resize_cubic(hr_crop, lr_patch, lr_patch);
  if (p_hr % lr_patch == 0)
    item.normal = downsample_area(n_crop, p_hr / lr_patch);
  else
    item.normal = resize_cubic(n_crop, lr_patch, lr_patch);
  renormalize_normal_image(item.normal);

  Tensor<S> all_coords = grid_coords<S>(p_hr, p_hr);
  Index total = p_hr * p_hr;
  if (full_grid || q_subset >= total) {
    item.coords = all_coords;
    item.cell = cell_for<S>(total, p_hr, p_hr);
    item.target = hr_crop.reshaped({3, total});
    item.grid_h = item.grid_w = p_hr;
  } else {
    item.coords = Tensor<S>({q_subset, 2});
    item.target = Tensor<S>({3, q_subset});
    for (Index q = 0; q < q_subset; ++q) {
      Index pick = rng.uniform_int(0, total - 1);
      item.coords.data.segment(q * 2, 2) = all_coords.data.segment(pick * 2, 2);
      for (Index c = 0; c < 3; ++c) item.target.data[c * q_subset + q] = hr_crop.data[c * total + pick];
    }
    item.cell = cell_for<S>(q_subset, p_hr, p_hr);
  }
  return item;
}

template <typename S>
struct GiifLossWeights {
  S l1 = S(1.0);
  S lpips = S(0.1);
  S gan = S(0.01);
};

template <typename S>
struct GiifStepReport {
  S l1 = 0, lpips = 0, gan = 0, total = 0;
  S d_loss = 0, d_real = 0, d_fake = 0;
};

// One optimizer step on the generator, then (when adversarial) one on the
// discriminator: BCE on real HR vs generated SR patches. The generator term
// is log(1 - D(SR)) as printed in the fine-tuning objective; its gradient
// saturates when D wins decisively, which the pretrain-then-enable schedule
// mitigates.
template <typename S>
GiifStepReport<S> giif_train_step(GiifModel<S>& model, Discriminator<S>* disc,
                                  const std::vector<TrainItem<S>>& batch, nn::Adam<S>& opt_g,
                                  nn::Adam<S>* opt_d, const GiifLossWeights<S>& w,
                                  const loss::Perceptual<S>& perc) {
  if (batch.empty()) throw ConfigError("empty training batch");
  GiifStepReport<S> rep;
  S bs = static_cast<S>(batch.size());
  bool adversarial = w.gan > S(0) && disc && opt_d;
  std::vector<Tensor<S>> fake_patches;

  Tape<S> tg;
  nn::Bound<S> bg = nn::bind(tg, model.params, true);
  Var<S> l1_acc = make_const(tg, Tensor<S>::scalar(S(0)));
  Var<S> perc_acc = l1_acc;
  Var<S> gan_acc = l1_acc;
  nn::Bound<S> bd_frozen;
  if (adversarial) bd_frozen = nn::bind(tg, disc->params, false);
  for (const TrainItem<S>& item : batch) {
    LatentGrid<S> grid = model.prepare(tg, bg, item.lr, item.normal);
    Var<S> pred = model.query_rgb(tg, bg, grid, item.coords, item.cell, true);
    l1_acc = l1_acc + loss::l1_all(pred, make_const(tg, item.target));
    bool patch = item.grid_h > 0;
    if (patch && (w.lpips > S(0) || adversarial)) {
      Var<S> pred_img = reshape_op(pred, {3, item.grid_h, item.grid_w});
      Tensor<S> tgt_img = item.target.reshaped({3, item.grid_h, item.grid_w});
      if (w.lpips > S(0)) perc_acc = perc_acc + perc(tg, pred_img, make_const(tg, tgt_img));
      if (adversarial) {
        Var<S> d = (*disc)(bd_frozen, pred_img, false);
        gan_acc = gan_acc + log_op(add_scalar(neg(clamp(d, S(1e-6), S(1) - S(1e-6))), S(1)));
        fake_patches.push_back(pred_img.val());
      }
    }
  }
  l1_acc = scale(l1_acc, S(1) / bs);
  perc_acc = scale(perc_acc, S(1) / bs);
  gan_acc = scale(gan_acc, S(1) / bs);
  Var<S> total = scale(l1_acc, w.l1);
  if (w.lpips > S(0)) total = total + scale(perc_acc, w.lpips);
  if (adversarial) total = total + scale(gan_acc, w.gan);
  rep.l1 = l1_acc.val().data[0];
  rep.lpips = perc_acc.val().data[0];
  rep.gan = gan_acc.val().data[0];
  rep.total = total.val().data[0];
  if (!std::isfinite(rep.total))
    throw DivergenceError("non-finite GIIF loss (l1=" + std::to_string(rep.l1) +
                          " lpips=" + std::to_string(rep.lpips) +
                          " gan=" + std::to_string(rep.gan) + ")");
  tg.backward(total.id);
  opt_g.step(model.params, bg);

  if (adversarial && !fake_patches.empty()) {
    Tape<S> td;
    nn::Bound<S> bd = nn::bind(td, disc->params, true);
    Var<S> d_acc = make_const(td, Tensor<S>::scalar(S(0)));
    S n = static_cast<S>(fake_patches.size());
    std::size_t k = 0;
    for (const TrainItem<S>& item : batch) {
      if (item.grid_h == 0) continue;
      Tensor<S> tgt_img = item.target.reshaped({3, item.grid_h, item.grid_w});
      Var<S> real = clamp((*disc)(bd, make_const(td, tgt_img), true), S(1e-6), S(1) - S(1e-6));
      Var<S> fake =
          clamp((*disc)(bd, make_const(td, fake_patches[k]), true), S(1e-6), S(1) - S(1e-6));
      ++k;
      rep.d_real += real.val().data[0] / n;
      rep.d_fake += fake.val().data[0] / n;
      d_acc = d_acc + neg(log_op(real) + log_op(add_scalar(neg(fake), S(1))));
    }
    d_acc = scale(d_acc, S(1) / n);
    rep.d_loss = d_acc.val().data[0];
    if (!std::isfinite(rep.d_loss)) throw DivergenceError("non-finite discriminator loss");
    td.backward(d_acc.id);
    opt_d->step(disc->params, bd);
  }
  return rep;
}

}  // namespace srhand::giif
