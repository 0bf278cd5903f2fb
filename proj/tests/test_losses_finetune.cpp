#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "srhand/finetune.h"
#include "srhand/losses.h"
#include "srhand/mesh.h"

using namespace srhand;
using R = double;

namespace {

Tensor<R> random_image(Rng& rng, Index C, Index H, Index W) {
  Tensor<R> t({C, H, W});
  for (Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(0.0, 1.0);
  return t;
}

// n x n vertex grid in the z=0 plane, each quad split into two triangles.
// Interior vertices see a symmetric neighborhood (4 axis + 2 diagonal), so a
// uniform Laplacian annihilates linear fields there.
void grid_mesh(Index n, geom::MatX3<R>& V, geom::FaceMat& F) {
  V.resize(n * n, 3);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) V.row(i * n + j) << R(i), R(j), R(0);
  F.resize(2 * (n - 1) * (n - 1), 3);
  Index f = 0;
  for (Index i = 0; i + 1 < n; ++i)
    for (Index j = 0; j + 1 < n; ++j) {
      Index a = i * n + j, b = i * n + j + 1, c = (i + 1) * n + j, d = (i + 1) * n + j + 1;
      F.row(f++) << a, b, d;
      F.row(f++) << a, d, c;
    }
}

}  // namespace

TEST_CASE("masked l1 averages only over the mask") {
  Rng rng(11);
  Tape<R> tape;
  Tensor<R> av = random_image(rng, 3, 4, 4);
  Tensor<R> bv = random_image(rng, 3, 4, 4);
  Var<R> a = make_const(tape, av), b = make_const(tape, bv);

  Tensor<R> full = Tensor<R>::full({1, 4, 4}, 1.0);
  R manual = (av.data - bv.data).cwiseAbs().mean();
  CHECK(loss::masked_l1(tape, a, b, full).val().data[0] == doctest::Approx(manual));

  Tensor<R> empty = Tensor<R>::zeros({1, 4, 4});
  CHECK(loss::masked_l1(tape, a, b, empty).val().data[0] == 0.0);

  // unit error inside the mask, huge error outside: only the inside counts
  Tensor<R> half = Tensor<R>::zeros({1, 4, 4});
  Tensor<R> cv = av;
  for (Index p = 0; p < 16; ++p) {
    bool in = p < 8;
    half.data[p] = in ? 1.0 : 0.0;
    for (Index c = 0; c < 3; ++c) cv.data[c * 16 + p] = av.data[c * 16 + p] + (in ? 1.0 : 100.0);
  }
  Var<R> cvar = make_const(tape, cv);
  CHECK(loss::masked_l1(tape, cvar, a, half).val().data[0] == doctest::Approx(1.0));
}

TEST_CASE("masked l1 gradient matches finite differences") {
  Rng rng(12);
  Tensor<R> av = random_image(rng, 3, 5, 4);
  Tensor<R> bv = random_image(rng, 3, 5, 4);
  Tensor<R> mask = Tensor<R>::zeros({1, 5, 4});
  for (Index p = 0; p < 20; ++p) mask.data[p] = (p % 3 != 0) ? 1.0 : 0.0;

  Tape<R> tape;
  Var<R> a = make_leaf(tape, av);
  Var<R> b = make_const(tape, bv);
  Var<R> out = loss::masked_l1(tape, a, b, mask);
  tape.backward(out.id);
  Tensor<R> fd = fd_gradient<R>(av, [&](const Tensor<R>& t) {
    Tape<R> t2;
    return loss::masked_l1(t2, make_const(t2, t), make_const(t2, bv), mask).val().data[0];
  });
  CHECK(max_rel_error<R>(tape.grad(a.id), fd) < 1e-6);
}

TEST_CASE("perceptual distance is zero only for identical images") {
  loss::Perceptual<R> perc;
  Rng rng(13);
  Tensor<R> av = random_image(rng, 3, 12, 12);
  Tape<R> tape;
  Var<R> a = make_const(tape, av);
  CHECK(perc(tape, a, a).val().data[0] == 0.0);

  Tensor<R> bv = av;
  bv.data[40] += 0.25;
  CHECK(perc(tape, a, make_const(tape, bv)).val().data[0] > 0.0);
}

TEST_CASE("perceptual distance grows with perturbation size") {
  loss::Perceptual<R> perc;
  Rng rng(14);
  Tensor<R> av = random_image(rng, 3, 16, 16);
  Tensor<R> noise({3, 16, 16});
  for (Index i = 0; i < noise.size(); ++i) noise.data[i] = rng.normal() * 0.1;
  Tensor<R> near = av, far = av;
  near.data += 0.05 * noise.data;
  far.data += noise.data;
  Tape<R> tape;
  Var<R> a = make_const(tape, av);
  R dn = perc(tape, a, make_const(tape, near)).val().data[0];
  R df = perc(tape, a, make_const(tape, far)).val().data[0];
  CHECK(dn > 0.0);
  CHECK(df > 4.0 * dn);
}

TEST_CASE("perceptual gradient matches finite differences") {
  loss::Perceptual<R> perc;
  Rng rng(15);
  Tensor<R> av = random_image(rng, 3, 8, 8);
  Tensor<R> bv = random_image(rng, 3, 8, 8);
  Tape<R> tape;
  Var<R> a = make_leaf(tape, av);
  Var<R> out = perc(tape, a, make_const(tape, bv));
  tape.backward(out.id);
  Tensor<R> fd = fd_gradient<R>(av, [&](const Tensor<R>& t) {
    Tape<R> t2;
    return perc(t2, make_const(t2, t), make_const(t2, bv)).val().data[0];
  });
  CHECK(max_rel_error<R>(tape.grad(a.id), fd) < 1e-5);
}

TEST_CASE("rgb loss is the masked term plus the weighted perceptual term") {
  loss::Perceptual<R> perc;
  Rng rng(16);
  Tensor<R> av = random_image(rng, 3, 8, 8);
  Tensor<R> bv = random_image(rng, 3, 8, 8);
  Tensor<R> mask = Tensor<R>::full({1, 8, 8}, 1.0);
  Tape<R> tape;
  Var<R> a = make_const(tape, av), b = make_const(tape, bv);
  R l1 = loss::masked_l1(tape, a, b, mask).val().data[0];
  R pc = perc(tape, a, b).val().data[0];
  R combined = loss::l_rgb(tape, a, b, mask, R(0.1), perc).val().data[0];
  CHECK(combined == doctest::Approx(l1 + 0.1 * pc));
  CHECK(loss::l_rgb(tape, a, b, mask, R(0), perc).val().data[0] == doctest::Approx(l1));
}

TEST_CASE("uniform laplacian is symmetric with zero row sums") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  grid_mesh(4, V, F);
  Eigen::SparseMatrix<R> A = loss::uniform_laplacian<R>(F, V.rows());
  Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic> Ad = A;
  CHECK((Ad - Ad.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::Matrix<R, Eigen::Dynamic, 1> ones = Eigen::Matrix<R, Eigen::Dynamic, 1>::Ones(V.rows());
  CHECK((Ad * ones).cwiseAbs().maxCoeff() == 0.0);
  // diagonal holds vertex degrees: corner vertex of the grid touches 2 or 3 edges
  CHECK(Ad(0, 0) >= 2.0);
}

TEST_CASE("part laplacian vanishes on constant and interior-linear fields") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  Index n = 5;
  grid_mesh(n, V, F);
  Index nv = n * n;
  Eigen::SparseMatrix<R> A = loss::uniform_laplacian<R>(F, nv);

  // part 0 = boundary (weight 0), part 1 = interior (weight 1)
  std::vector<Index> part(nv, 0);
  for (Index i = 1; i + 1 < n; ++i)
    for (Index j = 1; j + 1 < n; ++j) part[i * n + j] = 1;
  Tensor<R> phi = loss::per_vertex_weights<R>(part, {0.0, 1.0});

  Tape<R> tape;
  Var<R> constant = make_const(tape, Tensor<R>::full({nv, 3}, 0.7));
  CHECK(loss::part_laplacian(constant, A, phi).val().data[0] == doctest::Approx(0.0));

  Tensor<R> linear({nv, 3});
  for (Index v = 0; v < nv; ++v)
    linear.mat(nv, 3).row(v) << 2.0 * V(v, 0) - V(v, 1), V(v, 0) + 3.0, -V(v, 1);
  CHECK(loss::part_laplacian(make_const(tape, linear), A, phi).val().data[0] ==
        doctest::Approx(0.0).epsilon(1e-12));

  // a bump at the center is curvature the interior weights must see
  Tensor<R> bump = linear;
  bump.data[(n / 2 * n + n / 2) * 3] += 1.0;
  CHECK(loss::part_laplacian(make_const(tape, bump), A, phi).val().data[0] > 1e-3);
}

TEST_CASE("part weights scale the penalty linearly") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  grid_mesh(4, V, F);
  Index nv = 16;
  Eigen::SparseMatrix<R> A = loss::uniform_laplacian<R>(F, nv);
  std::vector<Index> part(nv, 0);
  Rng rng(17);
  Tensor<R> values({nv, 3});
  for (Index i = 0; i < values.size(); ++i) values.data[i] = rng.normal();

  Tape<R> tape;
  Var<R> x = make_const(tape, values);
  R base = loss::part_laplacian(x, A, loss::per_vertex_weights<R>(part, {0.5})).val().data[0];
  R twice = loss::part_laplacian(x, A, loss::per_vertex_weights<R>(part, {1.0})).val().data[0];
  CHECK(base > 0.0);
  CHECK(twice == doctest::Approx(2.0 * base));

  CHECK_THROWS_AS(loss::per_vertex_weights<R>(std::vector<Index>{0, 3}, {1.0, 1.0}), ConfigError);
}

TEST_CASE("part laplacian gradient matches finite differences") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  grid_mesh(3, V, F);
  Index nv = 9;
  Eigen::SparseMatrix<R> A = loss::uniform_laplacian<R>(F, nv);
  std::vector<Index> part(nv, 0);
  Tensor<R> phi = loss::per_vertex_weights<R>(part, {0.8});
  Rng rng(18);
  Tensor<R> values({nv, 3});
  for (Index i = 0; i < values.size(); ++i) values.data[i] = rng.normal();

  Tape<R> tape;
  Var<R> x = make_leaf(tape, values);
  Var<R> out = loss::part_laplacian(x, A, phi);
  tape.backward(out.id);
  Tensor<R> fd = fd_gradient<R>(values, [&](const Tensor<R>& t) {
    Tape<R> t2;
    return loss::part_laplacian(make_const(t2, t), A, phi).val().data[0];
  });
  CHECK(max_rel_error<R>(tape.grad(x.id), fd) < 1e-6);
}

TEST_CASE("edge loss measures squared length deviation and is rigid-invariant") {
  geom::MatX3<R> V(3, 3);
  V << 0, 0, 0, 3, 0, 0, 0, 4, 0;  // right triangle, sides 3,4,5
  geom::FaceMat F(1, 3);
  F << 0, 1, 2;
  auto edges = geom::mesh_edges(F);
  Eigen::SparseMatrix<R> D = loss::edge_difference_matrix<R>(edges, 3);

  Tensor<R> current({static_cast<Index>(edges.size())});
  {
    auto lens = geom::edge_lengths<R>(V, F);
    for (Index e = 0; e < current.size(); ++e) current.data[e] = lens[e];
  }

  Tape<R> tape;
  Tensor<R> vt({3, 3});
  vt.mat(3, 3) = V;
  Var<R> verts = make_const(tape, vt);
  CHECK(loss::edge_loss(verts, D, current).val().data[0] == doctest::Approx(0.0));

  // shrink every reference by 1: mean of 1^2 over the three edges
  Tensor<R> ref = current;
  ref.data.array() -= 1.0;
  CHECK(loss::edge_loss(verts, D, ref).val().data[0] == doctest::Approx(1.0));

  Eigen::AngleAxis<R> rot(0.83, geom::Vec3<R>(1, 2, -1).normalized());
  geom::MatX3<R> Vr = (V * rot.toRotationMatrix().transpose()).rowwise() +
                      Eigen::RowVector3d(0.3, -2.0, 5.0);
  Tensor<R> vrt({3, 3});
  vrt.mat(3, 3) = Vr;
  CHECK(loss::edge_loss(make_const(tape, vrt), D, ref).val().data[0] == doctest::Approx(1.0));
}

TEST_CASE("edge loss gradient matches finite differences") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  grid_mesh(3, V, F);
  auto edges = geom::mesh_edges(F);
  Eigen::SparseMatrix<R> D = loss::edge_difference_matrix<R>(edges, V.rows());
  Tensor<R> ref = Tensor<R>::full({static_cast<Index>(edges.size())}, 1.1);

  Rng rng(19);
  Tensor<R> vt({V.rows(), 3});
  vt.mat(V.rows(), 3) = V;
  for (Index i = 0; i < vt.size(); ++i) vt.data[i] += 0.05 * rng.normal();

  Tape<R> tape;
  Var<R> verts = make_leaf(tape, vt);
  Var<R> out = loss::edge_loss(verts, D, ref);
  tape.backward(out.id);
  Tensor<R> fd = fd_gradient<R>(vt, [&](const Tensor<R>& t) {
    Tape<R> t2;
    return loss::edge_loss(make_const(t2, t), D, ref).val().data[0];
  });
  CHECK(max_rel_error<R>(tape.grad(verts.id), fd) < 1e-6);
}

TEST_CASE("weighted total reports the breakdown and rejects non-finite terms") {
  Tape<R> tape;
  Var<R> t1 = make_const(tape, Tensor<R>::scalar(2.0));
  Var<R> t2 = make_const(tape, Tensor<R>::scalar(5.0));
  std::vector<loss::TermReport<R>> report;
  Var<R> total = loss::weighted_total<R>(tape, {{"a", t1}, {"b", t2}}, {0.5, 0.0}, &report);
  CHECK(total.val().data[0] == doctest::Approx(1.0));
  REQUIRE(report.size() == 2);
  CHECK(report[0].name == "a");
  CHECK(report[0].value == 2.0);
  CHECK(report[1].weight == 0.0);

  Var<R> bad = make_const(tape, Tensor<R>::scalar(std::nan("")));
  CHECK_THROWS_AS(loss::weighted_total<R>(tape, {{"bad", bad}}, {1.0}, nullptr), DivergenceError);
  CHECK_THROWS_AS(loss::weighted_total<R>(tape, {{"a", t1}}, {1.0, 2.0}, nullptr), ConfigError);
}

TEST_CASE("perceptual distance ranks blur above pixel noise of equal l1") {
  loss::Perceptual<R> perc;
  Rng rng(31);
  Index n = 16;
  Tensor<R> x({3, n, n});
  for (Index c = 0; c < 3; ++c)
    for (Index r = 0; r < n; ++r)
      for (Index cc = 0; cc < n; ++cc)
        x.data[(c * n + r) * n + cc] = ((r / 2 + cc / 2) % 2) ? 0.8 : 0.2;

  // 3x3 binomial blur, edge-replicated
  Tensor<R> blurred = Tensor<R>::zeros({3, n, n});
  const R k[3] = {0.25, 0.5, 0.25};
  for (Index c = 0; c < 3; ++c)
    for (Index r = 0; r < n; ++r)
      for (Index cc = 0; cc < n; ++cc) {
        R acc = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            Index rr = std::clamp(r + dr, Index(0), n - 1);
            Index c2 = std::clamp(cc + dc, Index(0), n - 1);
            acc += k[dr + 1] * k[dc + 1] * x.data[(c * n + rr) * n + c2];
          }
        blurred.data[(c * n + r) * n + cc] = acc;
      }

  R d = (blurred.data - x.data).cwiseAbs().mean();
  Tensor<R> noisy = x;
  for (Index i = 0; i < noisy.size(); ++i) noisy.data[i] += (rng.uniform(0.0, 1.0) < 0.5 ? -d : d);
  CHECK((noisy.data - x.data).cwiseAbs().mean() == doctest::Approx(d));

  Tape<R> tape;
  R p_blur = perc(tape, make_const(tape, x), make_const(tape, blurred)).val().data[0];
  R p_noise = perc(tape, make_const(tape, x), make_const(tape, noisy)).val().data[0];
  CHECK(p_blur > p_noise);
}

TEST_CASE("part laplacian of vertex positions is rigid-motion invariant") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  grid_mesh(4, V, F);
  Rng rng(57);
  for (Index i = 0; i < V.size(); ++i) V.data()[i] += 0.1 * rng.normal();
  auto A = loss::uniform_laplacian<R>(F, V.rows());
  Tensor<R> phi = Tensor<R>::full({V.rows()}, 1.0);

  auto eval = [&](const geom::MatX3<R>& verts) {
    Tape<R> tape;
    Tensor<R> t({verts.rows(), 3});
    t.mat(verts.rows(), 3) = verts;
    return loss::part_laplacian(make_const(tape, t), A, phi).val().data[0];
  };
  Eigen::AngleAxis<R> rot(0.83, Eigen::Vector3d(1, 2, -1).normalized());
  geom::MatX3<R> moved = V * rot.toRotationMatrix().transpose();
  moved.rowwise() += Eigen::RowVector3d(0.3, -0.7, 1.1);
  CHECK(eval(moved) == doctest::Approx(eval(V)).epsilon(1e-10));
  CHECK(eval(V) > 1e-6);
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

namespace {

// one triangle in the z=0 plane, seen head-on from z = -2
void front_tri(geom::MatX3<R>& V, geom::FaceMat& F) {
  V.resize(3, 3);
  V << -0.5, -0.5, 0, 0.5, -0.5, 0, 0, 0.5, 0;
  F.resize(1, 3);
  F << 0, 1, 2;
}

geom::Camera<R> front_cam(Index size, R eye_x = 0.0) {
  return geom::look_at<R>({eye_x, 0, -2}, {0, 0, 0}, {0, 1, 0}, R(size), R(size), size, size);
}

geom::SkinnedTemplate<R> scene_tet() {
  geom::SkinnedTemplate<R> t;
  t.vertices.resize(4, 3);
  t.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  t.faces.resize(4, 3);
  t.faces << 0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3;
  t.parent = {-1, 0};
  t.joints.resize(2, 3);
  t.joints << 0, 0, 0, 1, 0, 0;
  t.weights.resize(4, 2);
  t.weights << 1, 0, 0.2, 0.8, 0.7, 0.3, 0.6, 0.4;
  t.part = {0, 1, 0, 0};
  return t;
}

giif::GiifConfig tiny_giif() {
  giif::GiifConfig cfg;
  cfg.c_img = 8;
  cfg.c_n = 4;
  cfg.feat_unfold = false;
  cfg.decoder_hidden = {16, 16};
  return cfg;
}

Tensor<R> flat_normals(Index H, Index W) {
  Tensor<R> n = Tensor<R>::zeros({3, H, W});
  n.data.segment(2 * H * W, H * W).setConstant(1.0);
  return n;
}

scene::Scene<R> tiny_scene(Index frames, Index views, Index lr_size, Index upscale,
                           unsigned seed = 99) {
  scene::Scene<R> sc;
  sc.tpl = scene_tet();
  sc.light = render::default_lighting<R>();
  sc.upscale = upscale;
  Index H = lr_size * upscale;
  Rng rng(seed);
  for (Index f = 0; f < frames; ++f) {
    scene::FrameData<R> fr;
    fr.pose = geom::Pose<R>::identity(2);
    if (f > 0) fr.pose.joint_rotations.row(1) << 0, 0, 0.2 * R(f);
    for (Index v = 0; v < views; ++v) {
      scene::ViewData<R> vd;
      R ang = 0.5 * R(v) - 0.6;
      geom::Vec3<R> eye(2.5 * std::sin(ang), 0.4, -2.5 * std::cos(ang));
      vd.cam = geom::look_at<R>(eye, {0.25, 0.25, 0.25}, {0, 1, 0}, R(H), R(H), H, H);
      vd.lr = random_image(rng, 3, lr_size, lr_size);
      vd.normal_lr = flat_normals(lr_size, lr_size);
      fr.views.push_back(std::move(vd));
    }
    sc.frames.push_back(std::move(fr));
  }
  return sc;
}

// brute-force single-level orthonormal Haar on 2x2 blocks
void haar_oracle(const Tensor<R>& x, Tensor<R>& ll, Tensor<R>& hp) {
  Index C = x.shape[0], H = x.shape[1], W = x.shape[2], Ho = H / 2, Wo = W / 2;
  ll = Tensor<R>::zeros({C, Ho, Wo});
  hp = Tensor<R>::zeros({C, Ho, Wo});
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Ho; ++r)
      for (Index cc = 0; cc < Wo; ++cc) {
        R a = x.data[(c * H + 2 * r) * W + 2 * cc];
        R b = x.data[(c * H + 2 * r) * W + 2 * cc + 1];
        R d = x.data[(c * H + 2 * r + 1) * W + 2 * cc];
        R e = x.data[(c * H + 2 * r + 1) * W + 2 * cc + 1];
        ll.data[(c * Ho + r) * Wo + cc] = 0.5 * (a + b + d + e);
        hp.data[(c * Ho + r) * Wo + cc] =
            0.5 * (a + b - d - e) + 0.5 * (a - b + d - e) + 0.5 * (a - b - d + e);
      }
}

}  // namespace

TEST_CASE("bilinear sampling hits texel centers and blends between them") {
  Tensor<R> img = Tensor<R>::zeros({1, 2, 3});
  img.data << 1, 2, 3, 4, 5, 6;
  CHECK(ft::sample_bilinear(img, 0.5, 0.5)[0] == 1.0);
  CHECK(ft::sample_bilinear(img, 2.5, 1.5)[0] == 6.0);
  CHECK(ft::sample_bilinear(img, 1.0, 0.5)[0] == doctest::Approx(1.5));
  CHECK(ft::sample_bilinear(img, 0.5, 1.0)[0] == doctest::Approx(2.5));
  // border clamp
  CHECK(ft::sample_bilinear(img, -5.0, -5.0)[0] == 1.0);
  CHECK(ft::sample_bilinear(img, 50.0, 50.0)[0] == 6.0);
}

TEST_CASE("vertex statistics: constant views give the constant and zero variance") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  front_tri(V, F);
  std::vector<geom::Camera<R>> cams = {front_cam(16), front_cam(16)};
  std::vector<Tensor<R>> imgs = {Tensor<R>::full({3, 16, 16}, 0.7),
                                 Tensor<R>::full({3, 16, 16}, 0.7)};
  ft::VertexStats<R> st = ft::frame_color_stats<R>(V, F, cams, imgs);
  for (Index v = 0; v < 3; ++v) {
    REQUIRE(st.samples.data[v] == 2.0);
    CHECK(st.eligible[v] == 1);
    for (Index c = 0; c < 3; ++c) {
      CHECK(st.mu.data[v * 3 + c] == doctest::Approx(0.7));
      CHECK(st.var.data[v * 3 + c] == doctest::Approx(0.0));
    }
  }
  CHECK(st.excluded == 0);
}

TEST_CASE("vertex statistics: 0.4 and 0.6 give mean 0.5 and population variance 0.01") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  front_tri(V, F);
  std::vector<geom::Camera<R>> cams = {front_cam(16), front_cam(16)};
  std::vector<Tensor<R>> imgs = {Tensor<R>::full({3, 16, 16}, 0.4),
                                 Tensor<R>::full({3, 16, 16}, 0.6)};
  ft::VertexStats<R> st = ft::frame_color_stats<R>(V, F, cams, imgs);
  for (Index v = 0; v < 3; ++v)
    for (Index c = 0; c < 3; ++c) {
      CHECK(st.mu.data[v * 3 + c] == doctest::Approx(0.5));
      CHECK(st.var.data[v * 3 + c] == doctest::Approx(0.01));
    }
}

TEST_CASE("vertex statistics: single-view vertices are excluded") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  front_tri(V, F);
  std::vector<geom::Camera<R>> cams = {front_cam(16)};
  std::vector<Tensor<R>> imgs = {Tensor<R>::full({3, 16, 16}, 0.4)};
  ft::VertexStats<R> st = ft::frame_color_stats<R>(V, F, cams, imgs);
  for (Index v = 0; v < 3; ++v) {
    CHECK(st.eligible[v] == 0);
    CHECK(st.var.data[v * 3] == 0.0);
    CHECK(st.mu.data[v * 3] == doctest::Approx(0.4));
  }
  CHECK(st.excluded == 3);
  CHECK_THROWS_AS(ft::frame_color_stats<R>(V, F, {}, {}), ConfigError);
}

TEST_CASE("vertex statistics average over contributing frames") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  front_tri(V, F);
  std::vector<geom::MatX3<R>> posed = {V, V};
  std::vector<std::vector<geom::Camera<R>>> cams = {{front_cam(16), front_cam(16)},
                                                    {front_cam(16), front_cam(16)}};
  std::vector<std::vector<Tensor<R>>> imgs = {
      {Tensor<R>::full({3, 16, 16}, 0.2), Tensor<R>::full({3, 16, 16}, 0.4)},
      {Tensor<R>::full({3, 16, 16}, 0.6), Tensor<R>::full({3, 16, 16}, 0.8)}};
  ft::VertexStats<R> st = ft::vertex_color_stats<R>(posed, F, cams, imgs);
  for (Index v = 0; v < 3; ++v)
    for (Index c = 0; c < 3; ++c) {
      CHECK(st.mu.data[v * 3 + c] == doctest::Approx(0.5));   // mean of 0.3 and 0.7
      CHECK(st.var.data[v * 3 + c] == doctest::Approx(0.01));  // both frames' variance
    }
  CHECK(st.samples.data[0] == 4.0);
}

TEST_CASE("unconfidence combines drift and variance, clamped and rescaled") {
  Index V = 3;
  ft::VertexStats<R> cur, prev;
  cur.mu = Tensor<R>::zeros({V, 3});
  cur.var = Tensor<R>::zeros({V, 3});
  cur.eligible = {1, 1, 0};
  prev = cur;

  // identical stats, zero variance -> all zero
  Tensor<R> U = ft::unconfidence<R>(cur, prev, 0.5);
  for (Index v = 0; v < V; ++v) CHECK(U.data[v] == 0.0);

  // drift of exactly u_max saturates to 1
  cur.mu.data[0] = 0.5;
  U = ft::unconfidence<R>(cur, prev, 0.5);
  CHECK(U.data[0] == doctest::Approx(1.0));

  // variance alone: mean over channels, rescaled by u_max
  cur.mu.data[0] = 0.0;
  cur.var.data[3] = 0.3;  // vertex 1, channel 0 -> mean variance 0.1
  U = ft::unconfidence<R>(cur, prev, 0.5);
  CHECK(U.data[1] == doctest::Approx(0.2));

  // monotone in variance
  cur.var.data[4] = 0.3;
  Tensor<R> U2 = ft::unconfidence<R>(cur, prev, 0.5);
  CHECK(U2.data[1] >= U.data[1]);

  // ineligible vertices stay zero no matter what
  cur.mu.data[6] = 5.0;
  cur.var.data[6] = 5.0;
  U = ft::unconfidence<R>(cur, prev, 0.5);
  CHECK(U.data[2] == 0.0);

  CHECK_THROWS_AS(ft::unconfidence<R>(cur, prev, 0.0), ConfigError);
}

TEST_CASE("unconfidence image covers the silhouette and honors the floor") {
  geom::MatX3<R> V;
  geom::FaceMat F;
  front_tri(V, F);
  geom::Camera<R> cam = front_cam(16);
  Tensor<R> ones = Tensor<R>::full({3}, 1.0);
  Tensor<R> img = ft::unconfidence_image<R>(ones, V, F, cam);
  render::RasterResult<R> ras = render::rasterize_mesh<R>(V, F, cam);
  Index covered = 0;
  for (Index px = 0; px < 16 * 16; ++px) {
    if (ras.face[px] >= 0) {
      ++covered;
      CHECK(img.data[px] == doctest::Approx(1.0));
    } else {
      CHECK(img.data[px] == 0.0);
    }
  }
  CHECK(covered > 10);

  Tensor<R> zeros = Tensor<R>::zeros({3});
  Tensor<R> floored = ft::unconfidence_image<R>(zeros, V, F, cam, 0.3);
  for (Index px = 0; px < 16 * 16; ++px)
    CHECK(floored.data[px] == (ras.face[px] >= 0 ? 0.3 : 0.0));
}

TEST_CASE("consistency loss weights the difference by the unconfidence image") {
  Rng rng(41);
  Tape<R> tape;
  Tensor<R> ref = random_image(rng, 3, 6, 6);
  Tensor<R> other = random_image(rng, 3, 6, 6);
  Tensor<R> u = Tensor<R>::zeros({1, 6, 6});
  for (Index i = 0; i < 36; ++i) u.data[i] = rng.uniform(0.0, 1.0);

  // identical images: zero under any weighting
  CHECK(ft::consistency_loss<R>(tape, ref, make_const(tape, ref), u).val().data[0] == 0.0);

  // zero weight: zero regardless of content
  Tensor<R> uz = Tensor<R>::zeros({1, 6, 6});
  CHECK(ft::consistency_loss<R>(tape, ref, make_const(tape, other), uz).val().data[0] == 0.0);

  // unit weight: plain mean absolute difference
  Tensor<R> uo = Tensor<R>::full({1, 6, 6}, 1.0);
  R plain = (ref.data - other.data).cwiseAbs().mean();
  CHECK(ft::consistency_loss<R>(tape, ref, make_const(tape, other), uo).val().data[0] ==
        doctest::Approx(plain));

  CHECK_THROWS_AS(
      ft::consistency_loss<R>(tape, ref, make_const(tape, random_image(rng, 3, 4, 4)), u),
      ConfigError);
}

TEST_CASE("edge padding makes image sides even and is a no-op on even sides") {
  Rng rng(43);
  Tape<R> tape;
  Tensor<R> odd = random_image(rng, 2, 3, 5);
  Var<R> padded = ft::pad_edge_even(make_const(tape, odd));
  REQUIRE(padded.shape() == Shape{2, 4, 6});
  for (Index c = 0; c < 2; ++c) {
    for (Index r = 0; r < 4; ++r)
      for (Index cc = 0; cc < 6; ++cc) {
        R want = odd.data[(c * 3 + std::min<Index>(r, 2)) * 5 + std::min<Index>(cc, 4)];
        CHECK(padded.val().data[(c * 4 + r) * 6 + cc] == want);
      }
  }
  Var<R> even = make_const(tape, random_image(rng, 1, 4, 4));
  CHECK(ft::pad_edge_even(even).id == even.id);
}

TEST_CASE("wavelet loss matches a brute-force subband oracle") {
  Rng rng(47);
  Tape<R> tape;
  Tensor<R> a = random_image(rng, 3, 4, 6);
  Tensor<R> b = random_image(rng, 3, 4, 6);

  CHECK(ft::wavelet_loss<R>(tape, make_const(tape, a), a).val().data[0] == 0.0);

  Tensor<R> lla, hpa, llb, hpb;
  haar_oracle(a, lla, hpa);
  haar_oracle(b, llb, hpb);
  R want = (lla.data - llb.data).cwiseAbs().mean() + (hpa.data - hpb.data).cwiseAbs().mean();
  CHECK(ft::wavelet_loss<R>(tape, make_const(tape, a), b).val().data[0] ==
        doctest::Approx(want).epsilon(1e-12));

  // constant image c against zero: low-pass is 2c, high-pass vanishes
  Tensor<R> flat = Tensor<R>::full({3, 4, 4}, 0.25);
  Tensor<R> zero = Tensor<R>::zeros({3, 4, 4});
  CHECK(ft::wavelet_loss<R>(tape, make_const(tape, flat), zero).val().data[0] ==
        doctest::Approx(0.5).epsilon(1e-12));

  // odd sides go through the padding path
  Tensor<R> o = random_image(rng, 3, 5, 5);
  CHECK(ft::wavelet_loss<R>(tape, make_const(tape, o), o).val().data[0] == 0.0);

  CHECK_THROWS_AS(ft::wavelet_loss<R>(tape, make_const(tape, a), zero), ConfigError);
}

TEST_CASE("haar transform reconstructs the image exactly") {
  Rng rng(53);
  Tape<R> tape;
  Tensor<R> x = random_image(rng, 3, 4, 4);
  Var<R> w = haar2(make_const(tape, x));
  const auto& wd = w.val().data;
  Index C = 3, H = 4, W = 4, Ho = 2, Wo = 2;
  R worst = 0;
  for (Index c = 0; c < C; ++c)
    for (Index r = 0; r < Ho; ++r)
      for (Index cc = 0; cc < Wo; ++cc) {
        Index p = (c * Ho + r) * Wo + cc;
        R ll = wd[p], lh = wd[(C + c) * Ho * Wo + r * Wo + cc],
          hl = wd[(2 * C + c) * Ho * Wo + r * Wo + cc],
          hh = wd[(3 * C + c) * Ho * Wo + r * Wo + cc];
        Index base = (c * H + 2 * r) * W + 2 * cc;
        worst = std::max(worst, std::abs(0.5 * (ll + lh + hl + hh) - x.data[base]));
        worst = std::max(worst, std::abs(0.5 * (ll + lh - hl - hh) - x.data[base + 1]));
        worst = std::max(worst, std::abs(0.5 * (ll - lh + hl - hh) - x.data[base + W]));
        worst = std::max(worst, std::abs(0.5 * (ll - lh - hl + hh) - x.data[base + W + 1]));
      }
  CHECK(worst < 1e-6);
}

TEST_CASE("adversarial realism term follows log(1 - D) with clamping") {
  Rng rng(59);
  giif::Discriminator<R> disc;
  disc.feat = 4;
  disc.init(rng);
  Tape<R> tape;
  Var<R> img = make_const(tape, random_image(rng, 3, 16, 16));

  // zeroed output head: logits 0, D exactly 0.5
  disc.params.at("d.out.w").data.setZero();
  disc.params.at("d.out.b").data.setZero();
  nn::Bound<R> b = nn::bind(tape, disc.params, false);
  R at_half = ft::disc_loss(disc, b, img).val().data[0];
  CHECK(at_half == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(at_half == doctest::Approx(-0.6931).epsilon(1e-3));

  // saturated D hits the clamp floor
  disc.params.at("d.out.b").data.setConstant(1e3);
  nn::Bound<R> b2 = nn::bind(tape, disc.params, false);
  CHECK(ft::disc_loss(disc, b2, img).val().data[0] ==
        doctest::Approx(std::log(1e-6)).epsilon(1e-6));

  // strictly decreasing in D
  disc.params.at("d.out.b").data.setConstant(2.0);
  nn::Bound<R> b3 = nn::bind(tape, disc.params, false);
  CHECK(ft::disc_loss(disc, b3, img).val().data[0] < at_half);
}

TEST_CASE("fine-tune total is the exact sum of its parts by default") {
  Tape<R> tape;
  Var<R> zero = make_const(tape, Tensor<R>::scalar(0.0));
  CHECK(ft::aft_total<R>(tape, zero, zero, zero).val().data[0] == 0.0);

  Var<R> a = make_const(tape, Tensor<R>::scalar(0.125));
  Var<R> b = make_const(tape, Tensor<R>::scalar(-0.75));
  Var<R> c = make_const(tape, Tensor<R>::scalar(2.5));
  CHECK(ft::aft_total<R>(tape, a, b, c).val().data[0] == 0.125 - 0.75 + 2.5);

  ft::AftWeights<R> w;
  w.wavelet = 0.5;
  std::vector<loss::TermReport<R>> rep;
  CHECK(ft::aft_total<R>(tape, a, b, c, w, &rep).val().data[0] ==
        doctest::Approx(0.125 - 0.375 + 2.5));
  REQUIRE(rep.size() == 3);
  CHECK(rep[0].name == "consistency");
  CHECK(rep[1].weight == 0.5);
}

TEST_CASE("fine-tune objective gradient matches finite differences on decoder weights") {
  Rng rng(61);
  giif::GiifModel<R> model{tiny_giif()};
  model.init(rng);
  giif::Discriminator<R> disc;
  disc.feat = 4;
  disc.init(rng);

  Index n = 8, up = 2, H = n * up;
  Tensor<R> lr = random_image(rng, 3, n, n);
  Tensor<R> nlr = flat_normals(n, n);
  Tensor<R> avatar_render = random_image(rng, 3, H, H);
  Tensor<R> init_sr = random_image(rng, 3, H, H);
  Tensor<R> umap = Tensor<R>::zeros({1, H, H});
  for (Index i = 0; i < H * H; ++i) umap.data[i] = rng.uniform(0.0, 1.0);
  Tensor<R> coords = giif::grid_coords<R>(H, H);
  Tensor<R> cell = giif::cell_for<R>(H * H, H, H);

  auto loss_of = [&](const nn::Params<R>& p) {
    giif::GiifModel<R> m{tiny_giif()};
    m.params = p;
    Tape<R> td;
    nn::Bound<R> bdec = nn::bind_prefix(td, m.params, "dec.");
    giif::LatentGrid<R> grid = m.prepare(td, bdec, lr, nlr);
    Var<R> img = reshape_op(m.query_rgb(td, bdec, grid, coords, cell, true), {3, H, H});
    nn::Bound<R> bd = nn::bind(td, disc.params, false);
    Var<R> total = ft::aft_total<R>(td, ft::consistency_loss<R>(td, avatar_render, img, umap),
                                    ft::wavelet_loss<R>(td, img, init_sr),
                                    ft::disc_loss(disc, bd, img));
    return total.val().data[0];
  };

  Tape<R> td;
  nn::Bound<R> bdec = nn::bind_prefix(td, model.params, "dec.");
  giif::LatentGrid<R> grid = model.prepare(td, bdec, lr, nlr);
  Var<R> img = reshape_op(model.query_rgb(td, bdec, grid, coords, cell, true), {3, H, H});
  nn::Bound<R> bd = nn::bind(td, disc.params, false);
  Var<R> total = ft::aft_total<R>(td, ft::consistency_loss<R>(td, avatar_render, img, umap),
                                  ft::wavelet_loss<R>(td, img, init_sr),
                                  ft::disc_loss(disc, bd, img));
  td.backward(total.id);

  R h = 1e-5;
  for (const std::string& name : {std::string("dec.fc0.w"), std::string("dec.fc2.w")}) {
    const Tensor<R>& g = td.grad(bdec[name].id);
    for (Index k : {Index(0), Index(3), Index(7)}) {
      nn::Params<R> plus = model.params, minus = model.params;
      plus.at(name).data[k] += h;
      minus.at(name).data[k] -= h;
      R fd = (loss_of(plus) - loss_of(minus)) / (2 * h);
      R rel = std::abs(fd - g.data[k]) / std::max(std::abs(fd), R(1e-8));
      CHECK(rel < 1e-3);
    }
  }
  // encoder parameters are bound but frozen
  CHECK(!bdec["enc_img.c0.w"].requires_grad());
  CHECK(bdec["dec.fc0.w"].requires_grad());
}

TEST_CASE("schedule resolves its start epoch and validates intervals") {
  ft::FinetuneSchedule s;
  s.epochs = 10;
  s.fine_every = 2;
  CHECK(s.resolved_start() == 5);
  CHECK(!s.fine_round(5));
  CHECK(s.fine_round(6));
  CHECK(!s.fine_round(7));
  CHECK(s.fine_round(10));
  s.fine_start = 0;
  CHECK(s.fine_round(2));
  s.fine_every = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.fine_every = 2;
  s.fine_start = 11;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("pipeline trace follows the schedule exactly and only tunes the decoder") {
  Rng rng(67);
  scene::Scene<R> sc = tiny_scene(1, 2, 8, 2);
  giif::GiifModel<R> model{tiny_giif()};
  model.init(rng);
  giif::Discriminator<R> disc;
  disc.feat = 4;
  disc.init(rng);
  avatar::AvatarConfig acfg;
  acfg.code_dim = 4;
  acfg.head_hidden = {8};
  avatar::EmbeddingNets<R> nets{acfg};
  nets.init(sc.tpl, rng);

  std::map<std::string, Eigen::Matrix<R, Eigen::Dynamic, 1>> frozen, dec_before, av_before;
  for (const auto& [n, v] : model.params.values)
    (n.rfind("dec.", 0) == 0 ? dec_before : frozen)[n] = v.data;
  for (const auto& [n, v] : disc.params.values) frozen["disc/" + n] = v.data;
  for (const auto& [n, v] : nets.params.values) av_before[n] = v.data;

  ft::FinetuneSchedule sched;
  sched.epochs = 10;
  sched.fine_steps = 3;
  sched.fine_every = 2;
  sched.fine_start = 5;
  ft::PipelineConfig<R> cfg;
  std::vector<Index> sink_rounds;
  ft::PipelineResult<R> res = ft::run_pipeline<R>(
      sc, model, &disc, nets, sched, cfg,
      [&](Index round, const ft::PipelineResult<R>&) { sink_rounds.push_back(round); });

  std::vector<std::pair<Index, std::string>> want = {{0, "regenerate"}};
  for (Index t = 1; t <= 10; ++t) {
    want.push_back({t, "avatar"});
    if (t >= 5 && t % 2 == 0) {
      for (int s = 0; s < 3; ++s) want.push_back({t, "finetune"});
      want.push_back({t, "regenerate"});
    } else {
      want.push_back({t, "carry"});
    }
  }
  REQUIRE(res.events.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(res.events[i].epoch == want[i].first);
    CHECK(res.events[i].kind == want[i].second);
  }
  CHECK(res.rounds == 3);
  CHECK(sink_rounds == std::vector<Index>{0, 1, 2, 3});
  REQUIRE(res.log.size() == 10);
  CHECK(res.log[5].l_aft != 0.0);
  CHECK(res.log[0].l_aft == 0.0);
  REQUIRE(res.log[0].l3d_terms.size() == 5);
  CHECK(std::isfinite(res.log[9].l3d));

  // encoders and discriminator are bit-identical; decoder and avatar moved
  for (const auto& [n, v] : model.params.values) {
    if (n.rfind("dec.", 0) == 0) continue;
    CHECK((v.data - frozen.at(n)).cwiseAbs().maxCoeff() == 0.0);
  }
  for (const auto& [n, v] : disc.params.values)
    CHECK((v.data - frozen.at("disc/" + n)).cwiseAbs().maxCoeff() == 0.0);
  R dec_moved = 0, av_moved = 0;
  for (const auto& [n, v] : model.params.values)
    if (n.rfind("dec.", 0) == 0)
      dec_moved = std::max(dec_moved, (v.data - dec_before.at(n)).cwiseAbs().maxCoeff());
  for (const auto& [n, v] : nets.params.values)
    av_moved = std::max(av_moved, (v.data - av_before.at(n)).cwiseAbs().maxCoeff());
  CHECK(dec_moved > 0.0);
  CHECK(av_moved > 0.0);

  REQUIRE(res.i_sr.size() == 1);
  REQUIRE(res.i_sr[0].size() == 2);
  CHECK(res.i_sr[0][0].shape == Shape{3, 16, 16});
  CHECK(res.stats.num_vertices() == sc.tpl.num_vertices());
}

TEST_CASE("pipeline with an out-of-reach interval is the frozen-SR baseline") {
  Rng rng(71);
  scene::Scene<R> sc = tiny_scene(1, 2, 8, 2);
  giif::GiifModel<R> model{tiny_giif()};
  model.init(rng);
  avatar::AvatarConfig acfg;
  acfg.code_dim = 4;
  acfg.head_hidden = {8};
  avatar::EmbeddingNets<R> nets{acfg};
  nets.init(sc.tpl, rng);

  nn::Params<R> model_before = model.params;
  ft::FinetuneSchedule sched;
  sched.epochs = 4;
  sched.fine_every = 9;
  sched.fine_start = 0;
  ft::PipelineResult<R> res =
      ft::run_pipeline<R>(sc, model, nullptr, nets, sched, ft::PipelineConfig<R>{});
  CHECK(res.rounds == 0);
  for (const auto& e : res.events) CHECK(e.kind != "finetune");
  CHECK(model.params.same_values(model_before));
}

TEST_CASE("zero inner steps still regenerate and leave the images unchanged") {
  Rng rng(73);
  scene::Scene<R> sc = tiny_scene(1, 2, 8, 2);
  giif::GiifModel<R> model{tiny_giif()};
  model.init(rng);
  avatar::AvatarConfig acfg;
  acfg.code_dim = 4;
  acfg.head_hidden = {8};
  avatar::EmbeddingNets<R> nets{acfg};
  nets.init(sc.tpl, rng);

  ft::FinetuneSchedule sched;
  sched.epochs = 2;
  sched.fine_steps = 0;
  sched.fine_every = 1;
  sched.fine_start = 0;
  ft::PipelineResult<R> res =
      ft::run_pipeline<R>(sc, model, nullptr, nets, sched, ft::PipelineConfig<R>{});
  CHECK(res.rounds == 2);
  Index regens = 0, tunes = 0;
  for (const auto& e : res.events) {
    regens += e.kind == "regenerate";
    tunes += e.kind == "finetune";
  }
  CHECK(regens == 3);
  CHECK(tunes == 0);

  // decoder untouched: regenerated images equal the initial pass bit for bit
  Tensor<R> again = model.super_resolve(sc.frames[0].views[0].lr,
                                        sc.frames[0].views[0].normal_lr, 16, 16);
  CHECK((res.i_sr[0][0].data - again.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pipeline aborts when the 3d loss blows past its baseline") {
  Rng rng(79);
  scene::Scene<R> sc = tiny_scene(1, 2, 8, 2);
  giif::GiifModel<R> model{tiny_giif()};
  model.init(rng);
  avatar::AvatarConfig acfg;
  acfg.code_dim = 4;
  acfg.head_hidden = {8};
  avatar::EmbeddingNets<R> nets{acfg};
  nets.init(sc.tpl, rng);

  ft::FinetuneSchedule sched;
  sched.epochs = 3;
  sched.fine_every = 2;
  ft::PipelineConfig<R> cfg;
  cfg.divergence_factor = 0.5;  // any positive loss exceeds half of itself
  CHECK_THROWS_AS(ft::run_pipeline<R>(sc, model, nullptr, nets, sched, cfg), DivergenceError);
}
