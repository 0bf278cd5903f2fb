#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "srhand/autodiff.h"
#include "srhand/tensor.h"

// Image tensors are [C,H,W], row-major, so flat index = (c*H + r)*W + col.

namespace srhand {

namespace detail {

// im2col for stride-1 convolution with zero padding. Returns [C*k*k, Ho*Wo].
template <typename S>
Tensor<S> im2col(const Tensor<S>& img, Index C, Index H, Index W, Index k, Index pad) {
  Index Ho = H + 2 * pad - k + 1;
  Index Wo = W + 2 * pad - k + 1;
  Tensor<S> cols = Tensor<S>::zeros({C * k * k, Ho * Wo});
  auto M = cols.mat(C * k * k, Ho * Wo);
  for (Index c = 0; c < C; ++c)
    for (Index dr = 0; dr < k; ++dr)
      for (Index dc = 0; dc < k; ++dc) {
        Index row = (c * k + dr) * k + dc;
        for (Index r = 0; r < Ho; ++r) {
          Index sr = r + dr - pad;
          if (sr < 0 || sr >= H) continue;
          for (Index cc = 0; cc < Wo; ++cc) {
            Index sc = cc + dc - pad;
            if (sc < 0 || sc >= W) continue;
            M(row, r * Wo + cc) = img.data[(c * H + sr) * W + sc];
          }
        }
      }
  return cols;
}

template <typename S>
void col2im_add(const Tensor<S>& cols, Tensor<S>& img, Index C, Index H, Index W, Index k,
                Index pad) {
  Index Ho = H + 2 * pad - k + 1;
  Index Wo = W + 2 * pad - k + 1;
  auto M = cols.mat(C * k * k, Ho * Wo);
  for (Index c = 0; c < C; ++c)
    for (Index dr = 0; dr < k; ++dr)
      for (Index dc = 0; dc < k; ++dc) {
        Index row = (c * k + dr) * k + dc;
        for (Index r = 0; r < Ho; ++r) {
          Index sr = r + dr - pad;
          if (sr < 0 || sr >= H) continue;
          for (Index cc = 0; cc < Wo; ++cc) {
            Index sc = cc + dc - pad;
            if (sc < 0 || sc >= W) continue;
            img.data[(c * H + sr) * W + sc] += M(row, r * Wo + cc);
          }
        }
      }
}

}  // namespace detail

// Stride-1 conv. x: [Cin,H,W], w: [Cout, Cin*k*k], b: [Cout]. pad = k/2 keeps
// the spatial size ("same") for odd k.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, Index k, Index pad) {
  Tape<S>& t = *x.tape;
  Index Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Index Cout = w.shape()[0];
  Index Ho = H + 2 * pad - k + 1;
  Index Wo = W + 2 * pad - k + 1;
  auto cols = std::make_shared<Tensor<S>>(detail::im2col(x.val(), Cin, H, W, k, pad));
  Tensor<S> out({Cout, Ho, Wo});
  out.mat(Cout, Ho * Wo) = w.val().as_matrix() * cols->as_matrix();
  out.mat(Cout, Ho * Wo).colwise() += b.val().data;
  int ix = x.id, iw = w.id, ib = b.id;
  int id = t.push(
      std::move(out), detail::any_grad<S>({x, w, b}),
      [ix, iw, ib, cols, Cin, H, W, k, pad, Cout, Ho, Wo](Tape<S>& tp, typename Tape<S>::Node& n) {
        auto G = n.grad.mat(Cout, Ho * Wo);
        if (tp.node(iw).requires_grad) tp.grad(iw).as_matrix() += G * cols->as_matrix().transpose();
        if (tp.node(ib).requires_grad) tp.grad(ib).data += G.rowwise().sum();
        if (tp.node(ix).requires_grad) {
          Tensor<S> dcols({Cin * k * k, Ho * Wo});
          dcols.as_matrix() = tp.value(iw).as_matrix().transpose() * G;
          detail::col2im_add(dcols, tp.grad(ix), Cin, H, W, k, pad);
        }
      });
  return Var<S>{&t, id};
}

// 2x2 average pooling; H and W must be even.
template <typename S>
Var<S> avgpool2(Var<S> x) {
  Tape<S>& t = *x.tape;
  Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Index Ho = H / 2, Wo = W / 2;
  Tensor<S> out({C, Ho, Wo});
  const auto& xd = x.val().data;
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Ho; ++r)
      for (Index cc = 0; cc < Wo; ++cc) {
        Index base = (c * H + 2 * r) * W + 2 * cc;
        out.data[(c * Ho + r) * Wo + cc] =
            (xd[base] + xd[base + 1] + xd[base + W] + xd[base + W + 1]) * S(0.25);
      }
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, C, H, W, Ho, Wo](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    auto& gx = tp.grad(ix).data;
                    for (Index c = 0; c < C; ++c)
                      for (Index r = 0; r < Ho; ++r)
                        for (Index cc = 0; cc < Wo; ++cc) {
                          S g = n.grad.data[(c * Ho + r) * Wo + cc] * S(0.25);
                          Index base = (c * H + 2 * r) * W + 2 * cc;
                          gx[base] += g;
                          gx[base + 1] += g;
                          gx[base + W] += g;
                          gx[base + W + 1] += g;
                        }
                  });
  return Var<S>{&t, id};
}

template <typename S>
Var<S> upsample_nearest2(Var<S> x) {
  Tape<S>& t = *x.tape;
  Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Tensor<S> out({C, 2 * H, 2 * W});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < 2 * H; ++r)
      for (Index cc = 0; cc < 2 * W; ++cc)
        out.data[(c * 2 * H + r) * 2 * W + cc] = x.val().data[(c * H + r / 2) * W + cc / 2];
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, C, H, W](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    auto& gx = tp.grad(ix).data;
                    for (Index c = 0; c < C; ++c)
                      for (Index r = 0; r < 2 * H; ++r)
                        for (Index cc = 0; cc < 2 * W; ++cc)
                          gx[(c * H + r / 2) * W + cc / 2] +=
                              n.grad.data[(c * 2 * H + r) * 2 * W + cc];
                  });
  return Var<S>{&t, id};
}

// 3x3 neighborhood unfolding: [C,H,W] -> [9C,H,W], zero beyond the border.
// Output channel order is (offset, channel): block d = dr*3+dc holds all C
// input channels shifted by (dr-1, dc-1).
template <typename S>
Var<S> unfold3x3(Var<S> x) {
  Tape<S>& t = *x.tape;
  Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Tensor<S> out = Tensor<S>::zeros({9 * C, H, W});
  for (Index d = 0; d < 9; ++d) {
    Index dr = d / 3 - 1, dc = d % 3 - 1;
    for (Index c = 0; c < C; ++c)
      for (Index r = 0; r < H; ++r) {
        Index sr = r + dr;
        if (sr < 0 || sr >= H) continue;
        for (Index cc = 0; cc < W; ++cc) {
          Index sc = cc + dc;
          if (sc < 0 || sc >= W) continue;
          out.data[((d * C + c) * H + r) * W + cc] = x.val().data[(c * H + sr) * W + sc];
        }
      }
  }
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, C, H, W](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    auto& gx = tp.grad(ix).data;
                    for (Index d = 0; d < 9; ++d) {
                      Index dr = d / 3 - 1, dc = d % 3 - 1;
                      for (Index c = 0; c < C; ++c)
                        for (Index r = 0; r < H; ++r) {
                          Index sr = r + dr;
                          if (sr < 0 || sr >= H) continue;
                          for (Index cc = 0; cc < W; ++cc) {
                            Index sc = cc + dc;
                            if (sc < 0 || sc >= W) continue;
                            gx[(c * H + sr) * W + sc] += n.grad.data[((d * C + c) * H + r) * W + cc];
                          }
                        }
                    }
                  });
  return Var<S>{&t, id};
}

// One level of the orthonormal 2D Haar transform. [C,H,W] -> [4C,H/2,W/2]
// with subband blocks ordered LL, LH, HL, HH. Rows of the analysis matrix are
// orthonormal, so the inverse is the transpose and backward reuses synthesis.
template <typename S>
Var<S> haar2(Var<S> x) {
  Tape<S>& t = *x.tape;
  Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Index Ho = H / 2, Wo = W / 2;
  Tensor<S> out({4 * C, Ho, Wo});
  const auto& xd = x.val().data;
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Ho; ++r)
      for (Index cc = 0; cc < Wo; ++cc) {
        Index base = (c * H + 2 * r) * W + 2 * cc;
        S a = xd[base], b = xd[base + 1], d = xd[base + W], e = xd[base + W + 1];
        Index p = r * Wo + cc;
        out.data[(0 * C + c) * Ho * Wo + p] = (a + b + d + e) * S(0.5);
        out.data[(1 * C + c) * Ho * Wo + p] = (a + b - d - e) * S(0.5);
        out.data[(2 * C + c) * Ho * Wo + p] = (a - b + d - e) * S(0.5);
        out.data[(3 * C + c) * Ho * Wo + p] = (a - b - d + e) * S(0.5);
      }
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, C, H, W, Ho, Wo](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    auto& gx = tp.grad(ix).data;
                    for (Index c = 0; c < C; ++c)
                      for (Index r = 0; r < Ho; ++r)
                        for (Index cc = 0; cc < Wo; ++cc) {
                          Index p = r * Wo + cc;
                          S ll = n.grad.data[(0 * C + c) * Ho * Wo + p];
                          S lh = n.grad.data[(1 * C + c) * Ho * Wo + p];
                          S hl = n.grad.data[(2 * C + c) * Ho * Wo + p];
                          S hh = n.grad.data[(3 * C + c) * Ho * Wo + p];
                          Index base = (c * H + 2 * r) * W + 2 * cc;
                          gx[base] += (ll + lh + hl + hh) * S(0.5);
                          gx[base + 1] += (ll + lh - hl - hh) * S(0.5);
                          gx[base + W] += (ll - lh + hl - hh) * S(0.5);
                          gx[base + W + 1] += (ll - lh - hl + hh) * S(0.5);
                        }
                  });
  return Var<S>{&t, id};
}

// ---------------------------------------------------------------------------
// Plain (non-tape) resampling used for dataset generation and metrics.
// ---------------------------------------------------------------------------

namespace detail {

// Catmull-Rom kernel (a = -0.5).
template <typename S>
S cubic_kernel(S x) {
  x = std::abs(x);
  if (x < S(1)) return (S(1.5) * x - S(2.5)) * x * x + S(1);
  if (x < S(2)) return ((S(-0.5) * x + S(2.5)) * x - S(4)) * x + S(2);
  return S(0);
}

}  // namespace detail

// Separable cubic resampling of a [C,H,W] image to (Hn, Wn). When shrinking,
// the kernel support is widened by the scale factor (antialiasing) and the
// weights renormalized. Source samples are clamped at the border.
template <typename S>
Tensor<S> resize_cubic(const Tensor<S>& img, Index Hn, Index Wn) {
  Index C = img.shape[0], H = img.shape[1], W = img.shape[2];
  auto axis_weights = [](Index n_src, Index n_dst) {
    S scale = static_cast<S>(n_src) / static_cast<S>(n_dst);
    S support = std::max(scale, S(1));
    std::vector<std::vector<std::pair<Index, S>>> taps(static_cast<std::size_t>(n_dst));
    for (Index i = 0; i < n_dst; ++i) {
      S center = (static_cast<S>(i) + S(0.5)) * scale - S(0.5);
      Index lo = static_cast<Index>(std::floor(center - 2 * support)) ;
      Index hi = static_cast<Index>(std::ceil(center + 2 * support));
      S wsum = 0;
      auto& row = taps[static_cast<std::size_t>(i)];
      for (Index s = lo; s <= hi; ++s) {
        S w = detail::cubic_kernel<S>((static_cast<S>(s) - center) / support);
        if (w == S(0)) continue;
        Index sc = std::clamp<Index>(s, 0, n_src - 1);
        row.emplace_back(sc, w);
        wsum += w;
      }
      for (auto& [sc, w] : row) w /= wsum;
    }
    return taps;
  };
  auto wr = axis_weights(H, Hn);
  auto wc = axis_weights(W, Wn);

  Tensor<S> tmp = Tensor<S>::zeros({C, Hn, W});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Hn; ++r)
      for (const auto& [sr, w] : wr[static_cast<std::size_t>(r)])
        for (Index cc = 0; cc < W; ++cc)
          tmp.data[(c * Hn + r) * W + cc] += w * img.data[(c * H + sr) * W + cc];

  Tensor<S> out = Tensor<S>::zeros({C, Hn, Wn});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Hn; ++r)
      for (Index cc = 0; cc < Wn; ++cc)
        for (const auto& [sc, w] : wc[static_cast<std::size_t>(cc)])
          out.data[(c * Hn + r) * Wn + cc] += w * tmp.data[(c * Hn + r) * W + sc];
  return out;
}

// Top-left crop of a [C,H,W] grid to [C,h,w].
template <typename S>
Var<S> crop2d(Var<S> x, Index h, Index w) {
  Tape<S>& t = *x.tape;
  Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Tensor<S> out({C, h, w});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < h; ++r)
      out.data.segment((c * h + r) * w, w) = x.val().data.segment((c * H + r) * W, w);
  int ix = x.id;
  int id = t.push(std::move(out), x.requires_grad(),
                  [ix, C, H, W, h, w](Tape<S>& tp, typename Tape<S>::Node& n) {
                    if (!tp.node(ix).requires_grad) return;
                    for (Index c = 0; c < C; ++c)
                      for (Index r = 0; r < h; ++r)
                        tp.grad(ix).data.segment((c * H + r) * W, w) +=
                            n.grad.data.segment((c * h + r) * w, w);
                  });
  return Var<S>{&t, id};
}

// Zero-pad a [C,H,W] tensor at the bottom/right to [C,h,w] (plain data, for
// inputs that are constants in the graph).
template <typename S>
Tensor<S> pad_to(const Tensor<S>& img, Index h, Index w) {
  Index C = img.shape[0], H = img.shape[1], W = img.shape[2];
  Tensor<S> out = Tensor<S>::zeros({C, h, w});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < H; ++r)
      out.data.segment((c * h + r) * w, W) = img.data.segment((c * H + r) * W, W);
  return out;
}

// Box average over an integer factor; exact for downsampling masks/normals.
template <typename S>
Tensor<S> downsample_area(const Tensor<S>& img, Index factor) {
  Index C = img.shape[0], H = img.shape[1], W = img.shape[2];
  Index Ho = H / factor, Wo = W / factor;
  Tensor<S> out = Tensor<S>::zeros({C, Ho, Wo});
  S inv = S(1) / static_cast<S>(factor * factor);
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Ho; ++r)
      for (Index cc = 0; cc < Wo; ++cc) {
        S acc = 0;
        for (Index dr = 0; dr < factor; ++dr)
          for (Index dc = 0; dc < factor; ++dc)
            acc += img.data[(c * H + r * factor + dr) * W + cc * factor + dc];
        out.data[(c * Ho + r) * Wo + cc] = acc * inv;
      }
  return out;
}

}  // namespace srhand
