#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "srhand/common.h"
#include "srhand/finetune.h"
#include "srhand/losses.h"
#include "srhand/mesh.h"
#include "srhand/tensor.h"

namespace srhand::metric {

template <typename S>
S mse(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw ConfigError("image shape mismatch");
  if (a.data.size() == 0) throw ConfigError("empty image");
  S acc = 0;
  for (Index i = 0; i < a.data.size(); ++i) {
    S d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<S>(a.data.size());
}

// Peak signal-to-noise ratio for images in [0,1], capped at 99 dB so
// identical inputs stay finite.
template <typename S>
S psnr(const Tensor<S>& a, const Tensor<S>& b) {
  S m = mse(a, b);
  if (m <= S(0)) return S(99);
  return std::min(S(99), S(10) * std::log10(S(1) / m));
}

namespace detail {

template <typename S>
std::array<S, 11> gaussian11() {
  std::array<S, 11> w;
  const S sigma = S(1.5);
  S sum = 0;
  for (int i = 0; i < 11; ++i) {
    S d = static_cast<S>(i - 5);
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (S(2) * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& x : w) x /= sum;
  return w;
}

// Separable valid-region Gaussian filter on one [H,W] plane.
template <typename S>
geom::MatX<S> gauss_valid(const geom::MatX<S>& img) {
  auto w = gaussian11<S>();
  Index H = img.rows(), W = img.cols();
  geom::MatX<S> rows(H, W - 10);
  for (Index r = 0; r < H; ++r)
    for (Index c = 0; c + 10 < W; ++c) {
      S acc = 0;
      for (int k = 0; k < 11; ++k) acc += w[static_cast<std::size_t>(k)] * img(r, c + k);
      rows(r, c) = acc;
    }
  geom::MatX<S> out(H - 10, W - 10);
  for (Index c = 0; c < W - 10; ++c)
    for (Index r = 0; r + 10 < H; ++r) {
      S acc = 0;
      for (int k = 0; k < 11; ++k) acc += w[static_cast<std::size_t>(k)] * rows(r + k, c);
      out(r, c) = acc;
    }
  return out;
}

}  // namespace detail

// Windowed structural similarity: 11x11 Gaussian (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1; mean of the per-pixel map over the valid
// region and all channels.
template <typename S>
S ssim(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw ConfigError("image shape mismatch");
  if (a.shape.size() != 3) throw ConfigError("ssim expects [C,H,W]");
  Index C = a.shape[0], H = a.shape[1], W = a.shape[2];
  if (H < 11 || W < 11) throw ConfigError("image too small for an 11x11 window");
  const S c1 = S(0.01) * S(0.01), c2 = S(0.03) * S(0.03);
  S total = 0;
  for (Index ch = 0; ch < C; ++ch) {
    Eigen::Map<const geom::MatX<S>> x(a.data.data() + ch * H * W, H, W);
    Eigen::Map<const geom::MatX<S>> y(b.data.data() + ch * H * W, H, W);
    geom::MatX<S> mx = detail::gauss_valid<S>(x);
    geom::MatX<S> my = detail::gauss_valid<S>(y);
    geom::MatX<S> mxx = detail::gauss_valid<S>(x.cwiseProduct(x));
    geom::MatX<S> myy = detail::gauss_valid<S>(y.cwiseProduct(y));
    geom::MatX<S> mxy = detail::gauss_valid<S>(x.cwiseProduct(y));
    geom::MatX<S> vx = mxx - mx.cwiseProduct(mx);
    geom::MatX<S> vy = myy - my.cwiseProduct(my);
    geom::MatX<S> cov = mxy - mx.cwiseProduct(my);
    geom::MatX<S> num =
        (S(2) * mx.cwiseProduct(my).array() + c1).matrix().cwiseProduct((S(2) * cov.array() + c2).matrix());
    geom::MatX<S> den = (mx.array().square() + my.array().square() + c1)
                            .matrix()
                            .cwiseProduct((vx.array() + vy.array() + c2).matrix());
    total += (num.array() / den.array()).mean();
  }
  return total / static_cast<S>(C);
}

// Symmetric mean nearest-vertex distance between two vertex sets, reported
// in millimetres via the unit scale.
template <typename S>
S p2p(const geom::MatX3<S>& a, const geom::MatX3<S>& b, S unit_to_mm = S(1)) {
  if (a.rows() == 0 || b.rows() == 0) throw ConfigError("empty vertex set");
  auto one_way = [](const geom::MatX3<S>& from, const geom::MatX3<S>& to) {
    S acc = 0;
    for (Index i = 0; i < from.rows(); ++i) {
      S best = std::numeric_limits<S>::max();
      for (Index j = 0; j < to.rows(); ++j)
        best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
      acc += std::sqrt(best);
    }
    return acc / static_cast<S>(from.rows());
  };
  return unit_to_mm * S(0.5) * (one_way(a, b) + one_way(b, a));
}

// Cross-view appearance disagreement: mean over vertices with enough views
// of the per-vertex colour variance, averaged over channels (and already
// over frames inside the stats).
template <typename S>
S inconsistency(const ft::VertexStats<S>& st) {
  S acc = 0;
  Index n = 0;
  for (Index v = 0; v < st.num_vertices(); ++v) {
    if (!st.eligible[static_cast<std::size_t>(v)]) continue;
    acc += (st.var.data[v * 3] + st.var.data[v * 3 + 1] + st.var.data[v * 3 + 2]) / S(3);
    ++n;
  }
  return n > 0 ? acc / static_cast<S>(n) : S(0);
}

// Silhouette overlap of two [1,H,W] masks, thresholded at 0.5.
template <typename S>
S mask_iou(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw ConfigError("mask shape mismatch");
  Index inter = 0, uni = 0;
  for (Index i = 0; i < a.data.size(); ++i) {
    bool pa = a.data[i] > S(0.5), pb = b.data[i] > S(0.5);
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni > 0 ? static_cast<S>(inter) / static_cast<S>(uni) : S(1);
}

// Learned-feature distance proxy: the same frozen random conv stack the
// training losses use, evaluated on constants.
template <typename S>
S lpips_proxy(const loss::Perceptual<S>& perc, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw ConfigError("image shape mismatch");
  Tape<S> tape;
  Var<S> va = make_const<S>(tape, a);
  Var<S> vb = make_const<S>(tape, b);
  return perc(tape, va, vb).val().data[0];
}

struct EvalRow {
  Index frame = 0, view = 0;
  double psnr_sr = 0, ssim_sr = 0, lpips_sr = 0;
  double psnr_3d = 0, lpips_3d = 0;
};

struct EvalReport {
  double psnr_sr = 0, lpips_sr = 0, ssim = 0;
  double psnr_3d = 0, lpips_3d = 0;
  double p2p_mm = 0, inconsistency = 0;
  std::vector<EvalRow> rows;
};

// Means over the per-sample rows plus the mesh- and multi-view-level terms.
inline EvalReport finalize_report(std::vector<EvalRow> rows, double p2p_mm, double inconsistency) {
  EvalReport rep;
  rep.rows = std::move(rows);
  rep.p2p_mm = p2p_mm;
  rep.inconsistency = inconsistency;
  if (rep.rows.empty()) return rep;
  for (const auto& r : rep.rows) {
    rep.psnr_sr += r.psnr_sr;
    rep.ssim += r.ssim_sr;
    rep.lpips_sr += r.lpips_sr;
    rep.psnr_3d += r.psnr_3d;
    rep.lpips_3d += r.lpips_3d;
  }
  double n = static_cast<double>(rep.rows.size());
  rep.psnr_sr /= n;
  rep.ssim /= n;
  rep.lpips_sr /= n;
  rep.psnr_3d /= n;
  rep.lpips_3d /= n;
  return rep;
}

}  // namespace srhand::metric
