#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srhand/mesh.h"
#include "srhand/skinning.h"

using namespace srhand;
using namespace srhand::geom;
using R = double;

namespace {

// Tetrahedron with two joints and a simple weight split, closed manifold.
SkinnedTemplate<R> make_tet() {
  SkinnedTemplate<R> t;
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

}  // namespace

TEST_CASE("edge enumeration and manifold check on the tetrahedron") {
  auto t = make_tet();
  auto edges = mesh_edges(t.faces);
  CHECK(edges.size() == 6);
  CHECK(is_closed_manifold(t.faces, 4));
  CHECK(euler_characteristic(t.faces, 4) == 2);

  // open surface: drop one face
  FaceMat open_faces = t.faces.topRows(3);
  CHECK(!is_closed_manifold(open_faces, 4));

  // duplicated face breaks the half-edge count
  FaceMat dup(5, 3);
  dup << t.faces, t.faces.row(0);
  CHECK(!is_closed_manifold(dup, 4));
}

TEST_CASE("one subdivision round: tetrahedron V=4,E=6,F=4 -> V=10,F=16") {
  auto t = make_tet();
  auto s = subdivide(t, 1);
  CHECK(s.num_vertices() == 10);
  CHECK(s.num_faces() == 16);
  CHECK(is_closed_manifold(s.faces, 10));
  CHECK(euler_characteristic(s.faces, 10) == 2);

  // midpoints carry provenance, originals do not
  CHECK(s.provenance[3].parent_a == -1);
  CHECK(s.provenance[4].parent_a >= 0);

  // midpoint position is the edge midpoint of its parents
  for (Index v = 4; v < 10; ++v) {
    auto pr = s.provenance[static_cast<std::size_t>(v)];
    CHECK(((s.vertices.row(v) -
            (t.vertices.row(pr.parent_a) + t.vertices.row(pr.parent_b)) * 0.5)
               .norm()) < 1e-15);
  }
}

TEST_CASE("three rounds multiply faces by 64 and keep invariants") {
  auto t = make_tet();
  auto s = subdivide(t, 3);
  CHECK(s.num_faces() == 4 * 64);
  CHECK(euler_characteristic(s.faces, s.num_vertices()) == 2);
  CHECK((s.weights.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-6);
  CHECK((s.weights.array() >= 0).all());
}

TEST_CASE("subdivision part labels: endpoint majority, ties to lower id") {
  auto t = make_tet();
  auto s = subdivide(t, 1);
  for (Index v = 4; v < 10; ++v) {
    auto pr = s.provenance[static_cast<std::size_t>(v)];
    int pa = t.part[static_cast<std::size_t>(pr.parent_a)];
    int pb = t.part[static_cast<std::size_t>(pr.parent_b)];
    int expect = pa == pb ? pa : std::min(pa, pb);
    CHECK(s.part[static_cast<std::size_t>(v)] == expect);
  }
}

TEST_CASE("hierarchy validation rejects cycles and multiple roots") {
  auto t = make_tet();
  t.parent = {1, 0};  // cycle, no root
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.parent = {-1, -1};  // two roots
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.parent = {-1, 0};
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("rodrigues basics") {
  Vec3<R> zero = Vec3<R>::Zero();
  CHECK((rodrigues<R>(zero) - Mat3<R>::Identity()).norm() < 1e-15);
  // 90 degrees about z maps x to y
  Vec3<R> aa(0, 0, M_PI / 2);
  Vec3<R> y = rodrigues<R>(aa) * Vec3<R>(1, 0, 0);
  CHECK((y - Vec3<R>(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("lbs identity pose is a fixpoint") {
  auto t = make_tet();
  auto posed = pose_template(t, Pose<R>::identity(2));
  CHECK((posed - t.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single joint full weight rotates about the joint position") {
  SkinnedTemplate<R> t = make_tet();
  t.weights << 0, 1, 0, 1, 0, 1, 0, 1;  // everything on joint 1 at (1,0,0)
  Pose<R> pose = Pose<R>::identity(2);
  pose.joint_rotations.row(1) << 0, 0, M_PI / 2;
  auto posed = pose_template(t, pose);
  Mat3<R> Rz = rodrigues<R>(Vec3<R>(0, 0, M_PI / 2));
  Vec3<R> j(1, 0, 0);
  for (Index v = 0; v < 4; ++v) {
    Vec3<R> expect = Rz * (t.vertices.row(v).transpose() - j) + j;
    CHECK((posed.row(v).transpose() - expect).norm() < 1e-12);
  }
}

TEST_CASE("global rigid motion at the root moves every vertex rigidly") {
  auto t = make_tet();
  Pose<R> pose = Pose<R>::identity(2);
  pose.joint_rotations.row(1) << 0.3, 0.2, -0.4;
  auto base = pose_template(t, pose);

  Vec3<R> aa(0.5, -0.2, 0.8);
  Mat3<R> Rg = rodrigues<R>(aa);
  Vec3<R> tg(0.1, 2.0, -0.7);

  // compose the rigid motion into the root joint
  Pose<R> moved = pose;
  Mat3<R> R0 = rodrigues<R>(Vec3<R>(pose.joint_rotations.row(0).transpose()));
  Eigen::AngleAxis<R> combined(Rg * R0);
  moved.joint_rotations.row(0) = (combined.axis() * combined.angle()).transpose();
  Vec3<R> j0 = t.joints.row(0).transpose();
  moved.root_translation = Rg * j0 + tg - j0;

  auto posed = pose_template(t, moved);
  for (Index v = 0; v < 4; ++v) {
    Vec3<R> expect = Rg * base.row(v).transpose() + tg;
    CHECK((posed.row(v).transpose() - expect).norm() < 1e-5);
  }
}

TEST_CASE("shape basis adds rest offsets before posing") {
  auto t = make_tet();
  t.shape_basis.resize(1, 12);
  t.shape_basis.setZero();
  t.shape_basis(0, 0) = 1;  // vertex 0 x offset
  Pose<R> pose = Pose<R>::identity(2);
  pose.beta.resize(1);
  pose.beta << 0.25;
  auto posed = pose_template(t, pose);
  CHECK(posed(0, 0) == doctest::Approx(0.25));
  CHECK(posed(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("lbs_apply tape op matches plain lbs and finite differences") {
  auto t = make_tet();
  Pose<R> pose = Pose<R>::identity(2);
  pose.joint_rotations.row(1) << 0.4, -0.1, 0.3;
  pose.root_translation << 0.05, 0, -0.02;
  auto A = joint_transforms(t, pose);

  Tensor<R> v0({4, 3}), w0({4, 2});
  v0.mat(4, 3) = t.vertices;
  w0.mat(4, 2) = t.weights;

  Tape<R> tape;
  Var<R> v = make_leaf(tape, v0);
  Var<R> w = make_leaf(tape, w0);
  Var<R> posed = lbs_apply(v, w, A);
  CHECK((posed.val().mat(4, 3) - lbs<R>(t.vertices, t.weights, A)).cwiseAbs().maxCoeff() < 1e-14);

  Var<R> loss = sum(square(posed));
  tape.backward(loss.id);
  Tensor<R> fdv = fd_gradient<R>(v0, [&](const Tensor<R>& xv) {
    Tape<R> t2;
    return sum(square(lbs_apply(make_leaf(t2, xv, false), make_leaf(t2, w0, false), A)))
        .val()
        .data[0];
  });
  Tensor<R> fdw = fd_gradient<R>(w0, [&](const Tensor<R>& xw) {
    Tape<R> t2;
    return sum(square(lbs_apply(make_leaf(t2, v0, false), make_leaf(t2, xw, false), A)))
        .val()
        .data[0];
  });
  CHECK(max_rel_error<R>(tape.grad(v.id), fdv) < 1e-6);
  CHECK(max_rel_error<R>(tape.grad(w.id), fdw) < 1e-6);
}

TEST_CASE("vertex_normals: unit length, orientation, gradient") {
  auto t = make_tet();
  Tensor<R> v0({4, 3});
  v0.mat(4, 3) = t.vertices;

  Tape<R> tape;
  Var<R> v = make_leaf(tape, v0);
  Var<R> n = vertex_normals(v, t.faces);
  for (Index i = 0; i < 4; ++i)
    CHECK(n.val().mat(4, 3).row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  // outward orientation: normal at vertex 0 points away from the centroid
  Vec3<R> centroid = t.vertices.colwise().mean().transpose();
  Vec3<R> n0 = n.val().mat(4, 3).row(0).transpose();
  CHECK(n0.dot(t.vertices.row(0).transpose() - centroid) > 0);

  Rng rng(71);
  Tensor<R> dir = random_normal<R>({4, 3}, rng);
  Var<R> loss = sum(n * make_const(tape, dir));
  tape.backward(loss.id);
  Tensor<R> fd = fd_gradient<R>(v0, [&](const Tensor<R>& xv) {
    Tape<R> t2;
    Var<R> n2 = vertex_normals(make_leaf(t2, xv, false), t.faces);
    return (n2.val().data.cwiseProduct(dir.data)).sum();
  });
  CHECK(max_rel_error<R>(tape.grad(v.id), fd, 1e-4) < 1e-5);
}

TEST_CASE("edge_lengths in canonical order") {
  auto t = make_tet();
  auto len = edge_lengths<R>(t.vertices, t.faces);
  CHECK(len.size() == 6);
  CHECK(len.minCoeff() == doctest::Approx(1.0));          // axis edges
  CHECK(len.maxCoeff() == doctest::Approx(std::sqrt(2)));  // diagonals
}
