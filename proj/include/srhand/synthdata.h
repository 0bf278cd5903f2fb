#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "srhand/camera.h"
#include "srhand/common.h"
#include "srhand/image_ops.h"
#include "srhand/mesh.h"
#include "srhand/rasterizer.h"
#include "srhand/scene.h"
#include "srhand/skinning.h"
#include "srhand/tensor.h"

namespace srhand::synth {

using geom::Camera;
using geom::FaceMat;
template <typename S>
using MatX = geom::MatX<S>;
template <typename S>
using MatX3 = geom::MatX3<S>;
template <typename S>
using Vec3 = geom::Vec3<S>;

// Sum of random-direction sinusoids; smooth, bounded by the sum of
// amplitudes, and evaluable at any point so it survives resampling.
template <typename S>
struct WaveField {
  std::vector<Vec3<S>> dirs;
  std::vector<S> freq, phase, amp;

  S operator()(const Vec3<S>& p) const {
    S s = 0;
    for (std::size_t k = 0; k < dirs.size(); ++k)
      s += amp[k] * std::sin(freq[k] * dirs[k].dot(p) + phase[k]);
    return s;
  }
};

template <typename S>
WaveField<S> make_wave_field(Rng& rng, int waves, S f_lo, S f_hi, S total_amp) {
  WaveField<S> w;
  for (int k = 0; k < waves; ++k) {
    S az = static_cast<S>(rng.uniform(0, 2 * M_PI));
    S z = static_cast<S>(rng.uniform(-1, 1));
    S r = std::sqrt(std::max(S(0), S(1) - z * z));
    w.dirs.push_back({r * std::cos(az), r * std::sin(az), z});
    w.freq.push_back(static_cast<S>(rng.uniform(f_lo, f_hi)));
    w.phase.push_back(static_cast<S>(rng.uniform(0, 2 * M_PI)));
    w.amp.push_back(total_amp / static_cast<S>(waves));
  }
  return w;
}

// One finger column: axis at (cx, cy), base ring on the palm top plane.
template <typename S>
struct DigitSpec {
  S cx = 0, cy = 0;  // axis position
  S z_top = 0;       // palm top plane (= base ring height)
  S len = 0;
  S radius = 0;
};

// Articulated toy hand (meters): palm slab with five finger columns, one
// root joint plus base/mid/tip per finger. Carries per-vertex albedo and
// the detail displacement field the reconstruction should recover.
template <typename S>
struct SynthHand {
  geom::SkinnedTemplate<S> tpl;
  Tensor<S> albedo;     // [V,3] in [0,1]
  MatX3<S> gt_disp;     // [V,3], rest-frame detail displacement
  std::vector<DigitSpec<S>> digits;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename S>
S point_segment_dist(const Vec3<S>& p, const Vec3<S>& a, const Vec3<S>& b) {
  Vec3<S> ab = b - a;
  S len2 = ab.squaredNorm();
  S t = len2 > S(0) ? std::clamp((p - a).dot(ab) / len2, S(0), S(1)) : S(0);
  return (a + t * ab - p).norm();
}

// Lattice-welded vertex book-keeping for the box surface.
struct LatticeMesh {
  std::map<std::array<Index, 3>, Index> vid_of;
  std::vector<std::array<double, 3>> pos;
  std::vector<std::array<Index, 3>> tris;

  Index vid(Index i, Index j, Index k, double x, double y, double z) {
    auto [it, fresh] = vid_of.try_emplace({i, j, k}, static_cast<Index>(pos.size()));
    if (fresh) pos.push_back({x, y, z});
    return it->second;
  }
  Index push(double x, double y, double z) {
    pos.push_back({x, y, z});
    return static_cast<Index>(pos.size()) - 1;
  }
  void quad(Index a, Index b, Index c, Index d) {
    tris.push_back({a, b, c});
    tris.push_back({a, c, d});
  }
};

}  // namespace detail

// Deterministic per seed; same seed gives bit-identical buffers. The base
// mesh is a gridded box (top face loses one 2x2 block per finger) with
// finger tubes stitched onto the hole rings, so the surface stays a closed
// genus-0 manifold by construction. `rounds` midpoint subdivisions refine it.
template <typename S>
SynthHand<S> build_template(std::uint64_t seed, int rounds = 1) {
  if (rounds < 0) throw ConfigError("subdivision rounds must be non-negative");
  Rng grng(mix_seed(seed, 1));
  Rng arng(mix_seed(seed, 2));
  Rng drng(mix_seed(seed, 3));

  const Index nx = 14, ny = 4, nz = 2;
  const double cell = 0.01;
  const double x0 = -0.07, y0 = -0.02;
  const double dz = 0.012 * (1.0 + 0.1 * grng.uniform(-1, 1));
  const double z_top = dz;  // slab spans [-dz, +dz]

  // finger blocks on the top face: x-cell pairs with one-cell gaps
  const std::array<Index, 5> bx = {0, 3, 6, 9, 12};
  const Index by = 1;
  const std::array<double, 5> base_len = {0.048, 0.062, 0.072, 0.066, 0.050};

  std::vector<DigitSpec<S>> digits(5);
  for (int d = 0; d < 5; ++d) {
    digits[d].cx = static_cast<S>(x0 + cell * (bx[static_cast<std::size_t>(d)] + 1));
    digits[d].cy = 0;
    digits[d].z_top = static_cast<S>(z_top);
    digits[d].len =
        static_cast<S>(base_len[static_cast<std::size_t>(d)] * (1.0 + 0.15 * grng.uniform(-1, 1)));
    digits[d].radius = static_cast<S>(0.0095 * (1.0 + 0.1 * grng.uniform(-1, 1)));
  }

  detail::LatticeMesh m;
  auto lx = [&](Index i) { return x0 + cell * i; };
  auto ly = [&](Index j) { return y0 + cell * j; };
  auto lz = [&](Index k) { return -dz + dz * k; };
  auto in_hole = [&](Index i, Index j) {
    if (j < by || j >= by + 2) return false;
    for (Index b : bx)
      if (i >= b && i < b + 2) return true;
    return false;
  };

  // du x dv = outward normal for every box side
  auto grid_face = [&](int axis, Index fixed, bool swap_uv, Index nu, Index nv) {
    for (Index u = 0; u < nu; ++u)
      for (Index v = 0; v < nv; ++v) {
        auto at = [&](Index uu, Index vv) {
          Index i, j, k;
          if (axis == 2) {  // z faces: (u,v) = swap ? (j,i) : (i,j)
            i = swap_uv ? vv : uu;
            j = swap_uv ? uu : vv;
            k = fixed;
          } else if (axis == 1) {  // y faces: (u,v) = swap ? (k,i) : (i,k)
            i = swap_uv ? vv : uu;
            k = swap_uv ? uu : vv;
            j = fixed;
          } else {  // x faces: (u,v) = swap ? (j,k) : (k,j)
            j = swap_uv ? uu : vv;
            k = swap_uv ? vv : uu;
            i = fixed;
          }
          return std::array<Index, 3>{i, j, k};
        };
        if (axis == 2 && fixed == nz) {
          Index i = swap_uv ? v : u, j = swap_uv ? u : v;
          if (in_hole(i, j)) continue;
        }
        auto A = at(u, v), B = at(u + 1, v), C = at(u + 1, v + 1), D = at(u, v + 1);
        auto emit = [&](const std::array<Index, 3>& q) {
          return m.vid(q[0], q[1], q[2], lx(q[0]), ly(q[1]), lz(q[2]));
        };
        m.quad(emit(A), emit(B), emit(C), emit(D));
      }
  };
  grid_face(2, nz, false, nx, ny);  // top (+z): du=+x, dv=+y
  grid_face(2, 0, true, ny, nx);    // bottom (-z): du=+y, dv=+x
  grid_face(1, 0, false, nx, nz);   // front (-y): du=+x, dv=+z
  grid_face(1, ny, true, nz, nx);   // back (+y): du=+z, dv=+x
  grid_face(0, 0, false, nz, ny);  // left (-x): du=+z, dv=+y
  grid_face(0, nx, true, ny, nz);  // right (+x): du=+y, dv=+z

  // finger tubes: base ring = hole boundary (counter-clockwise from +z),
  // matched by ring angles -135 + 45 s degrees
  const std::array<double, 8> ring_t = {0.12, 0.3, 0.45, 0.6, 0.75, 0.87, 0.95, 1.0};
  const std::array<double, 8> ring_r = {1.05, 1.0, 0.95, 0.9, 0.85, 0.8, 0.6, 0.35};
  for (int d = 0; d < 5; ++d) {
    const DigitSpec<S>& sp = digits[static_cast<std::size_t>(d)];
    Index b = bx[static_cast<std::size_t>(d)];
    std::array<std::array<Index, 2>, 8> ring_ij = {{{b, by},
                                                    {b + 1, by},
                                                    {b + 2, by},
                                                    {b + 2, by + 1},
                                                    {b + 2, by + 2},
                                                    {b + 1, by + 2},
                                                    {b, by + 2},
                                                    {b, by + 1}}};
    std::array<Index, 8> prev;
    for (int s = 0; s < 8; ++s) {
      auto [i, j] = ring_ij[static_cast<std::size_t>(s)];
      prev[static_cast<std::size_t>(s)] = m.vid(i, j, nz, lx(i), ly(j), lz(nz));
    }
    for (std::size_t r = 0; r < ring_t.size(); ++r) {
      std::array<Index, 8> cur;
      double rad = ring_r[r] * static_cast<double>(sp.radius);
      double z = z_top + ring_t[r] * static_cast<double>(sp.len);
      for (int s = 0; s < 8; ++s) {
        double a = (-135.0 + 45.0 * s) * M_PI / 180.0;
        cur[static_cast<std::size_t>(s)] = m.push(static_cast<double>(sp.cx) + rad * std::cos(a),
                                                  static_cast<double>(sp.cy) + rad * std::sin(a), z);
      }
      for (int s = 0; s < 8; ++s) {
        int sn = (s + 1) % 8;
        m.quad(prev[static_cast<std::size_t>(s)], prev[static_cast<std::size_t>(sn)],
               cur[static_cast<std::size_t>(sn)], cur[static_cast<std::size_t>(s)]);
      }
      prev = cur;
    }
    Index apex = m.push(static_cast<double>(sp.cx), static_cast<double>(sp.cy),
                        z_top + static_cast<double>(sp.len) + 0.35 * static_cast<double>(sp.radius));
    for (int s = 0; s < 8; ++s)
      m.tris.push_back({prev[static_cast<std::size_t>(s)], prev[static_cast<std::size_t>((s + 1) % 8)], apex});
  }

  SynthHand<S> hand;
  hand.seed = seed;
  hand.digits = digits;
  geom::SkinnedTemplate<S>& t = hand.tpl;
  Index V = static_cast<Index>(m.pos.size());
  t.vertices.resize(V, 3);
  for (Index v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) t.vertices(v, c) = static_cast<S>(m.pos[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)]);
  t.faces.resize(static_cast<Index>(m.tris.size()), 3);
  for (std::size_t f = 0; f < m.tris.size(); ++f)
    for (int c = 0; c < 3; ++c) t.faces(static_cast<Index>(f), c) = m.tris[f][static_cast<std::size_t>(c)];

  // joints: 0 = palm root, then base/mid/tip per finger
  const Index J = 16;
  t.joints.resize(J, 3);
  t.parent.assign(static_cast<std::size_t>(J), -1);
  t.joints.row(0) << S(0), S(0), S(0);
  for (int d = 0; d < 5; ++d) {
    const DigitSpec<S>& sp = digits[static_cast<std::size_t>(d)];
    Index jb = 1 + 3 * d, jm = jb + 1, jt = jb + 2;
    t.joints.row(jb) << sp.cx, sp.cy, sp.z_top;
    t.joints.row(jm) << sp.cx, sp.cy, sp.z_top + S(0.45) * sp.len;
    t.joints.row(jt) << sp.cx, sp.cy, sp.z_top + S(0.75) * sp.len;
    t.parent[static_cast<std::size_t>(jb)] = 0;
    t.parent[static_cast<std::size_t>(jm)] = static_cast<int>(jb);
    t.parent[static_cast<std::size_t>(jt)] = static_cast<int>(jm);
  }

  // distance-to-bone falloff weights; the root bone spans the palm and gets
  // a wider kernel so it dominates away from the fingers
  t.weights = MatX<S>::Zero(V, J);
  const S sig_digit = S(0.008), sig_root = S(0.025);
  for (Index v = 0; v < V; ++v) {
    Vec3<S> p = t.vertices.row(v).transpose();
    S droot = detail::point_segment_dist<S>(p, {S(-0.05), S(0), S(0)}, {S(0.05), S(0), S(0)});
    t.weights(v, 0) = std::exp(-(droot / sig_root) * (droot / sig_root));
    for (int d = 0; d < 5; ++d) {
      const DigitSpec<S>& sp = digits[static_cast<std::size_t>(d)];
      Vec3<S> jb(sp.cx, sp.cy, sp.z_top);
      Vec3<S> jm(sp.cx, sp.cy, sp.z_top + S(0.45) * sp.len);
      Vec3<S> jt(sp.cx, sp.cy, sp.z_top + S(0.75) * sp.len);
      Vec3<S> je(sp.cx, sp.cy, sp.z_top + sp.len);
      std::array<S, 3> dist = {detail::point_segment_dist<S>(p, jb, jm),
                               detail::point_segment_dist<S>(p, jm, jt),
                               detail::point_segment_dist<S>(p, jt, je)};
      for (int s = 0; s < 3; ++s) {
        S q = dist[static_cast<std::size_t>(s)] / sig_digit;
        t.weights(v, 1 + 3 * d + s) = std::exp(-q * q);
      }
    }
    t.weights.row(v) /= t.weights.row(v).sum();
  }
  t.part.resize(static_cast<std::size_t>(V));
  for (Index v = 0; v < V; ++v) {
    Index best;
    t.weights.row(v).maxCoeff(&best);
    t.part[static_cast<std::size_t>(v)] = static_cast<int>(best);
  }

  // recenter the bounding box on the origin so rigs can orbit the origin
  Vec3<S> lo = t.vertices.colwise().minCoeff().transpose();
  Vec3<S> hi = t.vertices.colwise().maxCoeff().transpose();
  Vec3<S> shift = (lo + hi) * S(0.5);
  t.vertices.rowwise() -= shift.transpose();
  t.joints.rowwise() -= shift.transpose();
  for (auto& sp : hand.digits) {
    sp.cx -= shift.x();
    sp.cy -= shift.y();
    sp.z_top -= shift.z();
  }

  t = geom::subdivide<S>(t, rounds);
  V = t.num_vertices();

  // albedo: skin tone, band-limited wrinkle modulation, bright nail patches
  WaveField<S> wrinkle = make_wave_field<S>(arng, 6, S(250), S(900), S(0.10));
  WaveField<S> tint = make_wave_field<S>(arng, 4, S(150), S(500), S(0.05));
  hand.albedo = Tensor<S>::zeros({V, 3});
  const Vec3<S> skin(S(0.78), S(0.57), S(0.48));
  const Vec3<S> nail(S(0.93), S(0.89), S(0.82));
  for (Index v = 0; v < V; ++v) {
    Vec3<S> p = t.vertices.row(v).transpose();
    S w = wrinkle(p);
    Vec3<S> c = skin * (S(1) + w);
    c.x() += tint(p);
    S nail_blend = 0;
    for (const auto& sp : hand.digits) {
      // patch on the -y side just below the tip
      Vec3<S> center(sp.cx, sp.cy - sp.radius * S(0.8), sp.z_top + sp.len - S(1.2) * sp.radius);
      Vec3<S> rel = p - center;
      S q = rel.x() * rel.x() / (sp.radius * sp.radius) +
            rel.y() * rel.y() / (sp.radius * sp.radius) +
            rel.z() * rel.z() / (S(2.2) * sp.radius * sp.radius);
      nail_blend = std::max(nail_blend, std::clamp(S(1.6) - q, S(0), S(1)));
    }
    c = c * (S(1) - nail_blend) + nail * nail_blend;
    for (int ch = 0; ch < 3; ++ch)
      hand.albedo.data[v * 3 + ch] = std::clamp(c[ch], S(0.02), S(0.98));
  }

  // detail displacement along rest normals, wavelengths ~1-4 cm
  WaveField<S> bump = make_wave_field<S>(drng, 5, S(160), S(520), S(0.002));
  MatX3<S> normals = geom::vertex_normals_plain<S>(t.vertices, t.faces);
  hand.gt_disp.resize(V, 3);
  for (Index v = 0; v < V; ++v) {
    Vec3<S> p = t.vertices.row(v).transpose();
    hand.gt_disp.row(v) = normals.row(v) * bump(p);
  }

  t.validate();
  return hand;
}

// n poses, the identity first; the rest draw bounded per-finger flexion
// (base/mid/tip about +x, bending toward -y) plus base abduction about +y.
template <typename S>
std::vector<geom::Pose<S>> sample_poses(Index n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("pose count must be positive");
  Rng rng(mix_seed(seed, 11));
  std::vector<geom::Pose<S>> poses;
  poses.push_back(geom::Pose<S>::identity(16));
  for (Index i = 1; i < n; ++i) {
    geom::Pose<S> p = geom::Pose<S>::identity(16);
    for (int d = 0; d < 5; ++d) {
      Index jb = 1 + 3 * d;
      p.joint_rotations(jb, 0) = static_cast<S>(rng.uniform(0, 0.7));
      p.joint_rotations(jb, 1) = static_cast<S>(rng.uniform(-0.12, 0.12));
      p.joint_rotations(jb + 1, 0) = static_cast<S>(rng.uniform(0, 0.9));
      p.joint_rotations(jb + 2, 0) = static_cast<S>(rng.uniform(0, 0.8));
    }
    poses.push_back(p);
  }
  return poses;
}

// Cameras on a sphere section of the given radius, all looking at the
// origin; azimuth spans the frontal arc, elevation cycles four steps.
// Focal length keeps the hand's apparent size independent of the radius.
template <typename S>
std::vector<Camera<S>> build_rig(Index n_views, S radius, Index image_size = 256) {
  if (n_views < 1) throw ConfigError("rig needs at least one view");
  if (radius <= S(0)) throw ConfigError("rig radius must be positive");
  if (image_size < 8) throw ConfigError("rig image size too small");
  std::vector<Camera<S>> rig;
  for (Index i = 0; i < n_views; ++i) {
    S az = n_views == 1 ? S(0)
                        : S(-1.2) + S(2.4) * static_cast<S>(i) / static_cast<S>(n_views - 1);
    S el = S(-0.3) + S(0.25) * static_cast<S>(i % 4);
    Vec3<S> eye(radius * std::sin(az) * std::cos(el), -radius * std::cos(az) * std::cos(el),
                radius * std::sin(el));
    S f = S(4) * static_cast<S>(image_size) * radius;
    rig.push_back(geom::look_at<S>(eye, Vec3<S>::Zero(), {S(0), S(0), S(1)}, f, f, image_size,
                                   image_size));
  }
  return rig;
}

template <typename S>
struct ViewImages {
  Tensor<S> hr;         // [3,H,W] in [0,1]
  Tensor<S> lr;         // [3,H/s,W/s] in [0,1]
  Tensor<S> normal_lr;  // [3,H/s,W/s] camera-space normals of the undisplaced pose
  Tensor<S> mask;       // [1,H,W]
};

template <typename S>
struct SynthSample {
  geom::Pose<S> pose;
  MatX3<S> gt_verts;  // displaced template, posed
  std::vector<ViewImages<S>> views;
};

template <typename S>
struct SynthDataset {
  SynthHand<S> hand;
  std::vector<Camera<S>> rig;
  MatX<S> light;  // [9,3]
  Index hr_size = 0, scale = 0;
  S bicubic_psnr = 0;  // upsampled-input baseline over all samples
  std::vector<SynthSample<S>> frames;
};

namespace detail {

template <typename S>
void clamp01(Tensor<S>& img) {
  for (S& x : img.data) x = std::clamp(x, S(0), S(1));
}

template <typename S>
Camera<S> scaled_camera(const Camera<S>& cam, Index s) {
  Camera<S> c = cam;
  c.fx /= static_cast<S>(s);
  c.fy /= static_cast<S>(s);
  c.cx /= static_cast<S>(s);
  c.cy /= static_cast<S>(s);
  c.width /= s;
  c.height /= s;
  return c;
}

}  // namespace detail

// Renders every (pose, view) pair: SH-lit HR image of the displaced posed
// hand, bicubic LR at 1/s, normal map of the undisplaced pose at LR scale,
// coverage mask. Records the mean PSNR of bicubic re-upsampling as the
// baseline a super-resolver has to beat.
template <typename S>
SynthDataset<S> generate(const SynthHand<S>& hand, const std::vector<geom::Pose<S>>& poses,
                         const std::vector<Camera<S>>& rig, Index hr_size, Index scale) {
  if (poses.empty() || rig.empty()) throw ConfigError("generator needs poses and cameras");
  if (scale < 1 || hr_size < scale) throw ConfigError("invalid scale factor");
  if (hr_size % scale != 0) throw ConfigError("scale must divide the image size");
  for (const auto& cam : rig)
    if (cam.width != hr_size || cam.height != hr_size)
      throw ConfigError("rig image size does not match the requested size");

  SynthDataset<S> ds;
  ds.hand = hand;
  ds.rig = rig;
  ds.hr_size = hr_size;
  ds.scale = scale;
  ds.light = render::default_lighting<S>() * S(0.72);

  const geom::SkinnedTemplate<S>& t = hand.tpl;
  MatX3<S> displaced = t.vertices + hand.gt_disp;
  Eigen::Map<const MatX<S>> albedo(hand.albedo.data.data(), t.num_vertices(), 3);

  S psnr_sum = 0;
  Index psnr_n = 0;
  for (const auto& pose : poses) {
    SynthSample<S> fr;
    fr.pose = pose;
    auto A = geom::joint_transforms<S>(t, pose);
    fr.gt_verts = geom::lbs<S>(displaced, t.weights, A);
    MatX3<S> undisp = geom::lbs<S>(t.vertices, t.weights, A);
    MatX3<S> normals = geom::vertex_normals_plain<S>(fr.gt_verts, t.faces);
    MatX<S> shaded = render::shade_sh_plain<S>(albedo, normals, ds.light);
    for (const auto& cam : rig) {
      ViewImages<S> vi;
      render::RasterResult<S> ras = render::rasterize_mesh<S>(fr.gt_verts, t.faces, cam);
      vi.hr = render::interpolate_attr<S>(ras, t.faces, shaded);
      detail::clamp01(vi.hr);
      vi.mask = ras.mask;
      vi.lr = resize_cubic<S>(vi.hr, hr_size / scale, hr_size / scale);
      detail::clamp01(vi.lr);
      vi.normal_lr =
          render::render_normal_map<S>(undisp, t.faces, detail::scaled_camera(cam, scale)).normals;

      Tensor<S> up = resize_cubic<S>(vi.lr, hr_size, hr_size);
      detail::clamp01(up);
      S mse = 0;
      for (Index px = 0; px < up.data.size(); ++px) {
        S d = up.data[px] - vi.hr.data[px];
        mse += d * d;
      }
      mse /= static_cast<S>(up.data.size());
      psnr_sum += mse > S(0) ? std::min(S(99), S(10) * std::log10(S(1) / mse)) : S(99);
      ++psnr_n;
      fr.views.push_back(std::move(vi));
    }
    ds.frames.push_back(std::move(fr));
  }
  ds.bicubic_psnr = psnr_sum / static_cast<S>(psnr_n);
  return ds;
}

// Repackages a dataset for the reconstruction pipeline; cameras stay at HR
// resolution, LR inputs keep the generator's scale factor.
template <typename S>
scene::Scene<S> to_scene(const SynthDataset<S>& ds) {
  scene::Scene<S> sc;
  sc.tpl = ds.hand.tpl;
  sc.light = ds.light;
  sc.upscale = ds.scale;
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    scene::FrameData<S> fd;
    fd.pose = ds.frames[f].pose;
    for (std::size_t v = 0; v < ds.frames[f].views.size(); ++v) {
      scene::ViewData<S> vd;
      vd.cam = ds.rig[v];
      vd.lr = ds.frames[f].views[v].lr;
      vd.normal_lr = ds.frames[f].views[v].normal_lr;
      vd.hr = ds.frames[f].views[v].hr;
      vd.mask_hr = ds.frames[f].views[v].mask;
      fd.views.push_back(std::move(vd));
    }
    sc.frames.push_back(std::move(fd));
  }
  return sc;
}

}  // namespace srhand::synth
