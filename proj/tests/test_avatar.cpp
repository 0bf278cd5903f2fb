#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "srhand/avatar.h"

using namespace srhand;
using geom::Pose;
using geom::SkinnedTemplate;
using R = double;

namespace {

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

avatar::AvatarConfig small_config() {
  avatar::AvatarConfig cfg;
  cfg.code_dim = 4;
  cfg.head_hidden = {8};
  return cfg;
}

Pose<R> bent_pose() {
  Pose<R> p = Pose<R>::identity(2);
  p.joint_rotations.row(1) << 0.0, 0.0, 0.5;
  p.root_translation << 0.02, -0.01, 0.03;
  return p;
}

void randomize(Tensor<R>& t, Rng& rng, R s) {
  for (Index i = 0; i < t.size(); ++i) t.data[i] = s * rng.normal();
}

}  // namespace

TEST_CASE("pose features flatten per-joint rotation matrices") {
  Pose<R> id = Pose<R>::identity(2);
  Tensor<R> f = avatar::pose_features(id);
  REQUIRE(f.shape == Shape{18});
  for (Index j = 0; j < 2; ++j)
    for (Index r = 0; r < 3; ++r)
      for (Index c = 0; c < 3; ++c)
        CHECK(f.data[j * 9 + r * 3 + c] == (r == c ? 1.0 : 0.0));

  Pose<R> rot = Pose<R>::identity(2);
  rot.joint_rotations.row(0) << 0, 0, M_PI / 2;
  Tensor<R> g = avatar::pose_features(rot);
  CHECK(g.data[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.data[1] == doctest::Approx(-1.0));
  CHECK(g.data[3] == doctest::Approx(1.0));

  Pose<R> big = Pose<R>::identity(2);
  big.joint_rotations.row(0) << M_PI, 0, 0;
  CHECK_THROWS_AS(avatar::pose_features(big), ConfigError);
  Pose<R> bad = Pose<R>::identity(2);
  bad.joint_rotations(0, 0) = std::nan("");
  CHECK_THROWS_AS(avatar::pose_features(bad), ConfigError);
}

TEST_CASE("zero-initialized heads predict the undeformed avatar") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(21);
  nets.init(tpl, rng);

  Tape<R> tape;
  nn::Bound<R> b = nn::bind(tape, nets.params, false);
  auto pred = avatar::predict(tape, b, nets, bent_pose());
  CHECK(pred.disp.val().data.cwiseAbs().maxCoeff() == 0.0);
  CHECK(pred.w_res.val().data.cwiseAbs().maxCoeff() == 0.0);
  CHECK((pred.albedo.val().data.array() - 0.5).abs().maxCoeff() == 0.0);
  CHECK(pred.disp.shape() == Shape{10, 3});
  CHECK(pred.w_res.shape() == Shape{10, 2});
}

TEST_CASE("fine mesh with zero heads equals plain skinning at any pose") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(22);
  nets.init(tpl, rng);

  for (const Pose<R>& pose : {Pose<R>::identity(2), bent_pose()}) {
    Tape<R> tape;
    nn::Bound<R> b = nn::bind(tape, nets.params, false);
    auto fm = avatar::pose_fine(tape, b, nets, tpl, pose);
    geom::MatX3<R> want = geom::pose_template(tpl, pose);
    Tensor<R> got = fm.verts.val();
    CHECK((got.mat(10, 3) - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("random displacement head stays inside the point-to-point budget") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(23);
  nets.init(tpl, rng);
  // wake the displacement and albedo heads; skinning residuals stay zero
  randomize(nets.params.values.at("phi_d.fc1.w"), rng, 3.0);
  randomize(nets.params.values.at("phi_d.fc1.b"), rng, 3.0);
  randomize(nets.params.values.at("phi_rho.fc1.w"), rng, 2.0);

  Tape<R> tape;
  nn::Bound<R> b = nn::bind(tape, nets.params, false);
  auto pred = avatar::predict(tape, b, nets, bent_pose());
  Tensor<R> d = pred.disp.val();
  R dmax = nets.cfg.d_max;
  CHECK(d.data.cwiseAbs().maxCoeff() <= dmax);
  CHECK(d.data.cwiseAbs().maxCoeff() > 0.0);
  R worst = 0;
  for (Index v = 0; v < 10; ++v) worst = std::max(worst, d.mat(10, 3).row(v).norm());
  CHECK(worst <= dmax);

  Tensor<R> rho = pred.albedo.val();
  CHECK(rho.data.minCoeff() > 0.0);
  CHECK(rho.data.maxCoeff() < 1.0);

  // posed fine mesh deviates from plain skinning by at most the displacement
  auto fm = avatar::pose_fine(tape, b, nets, tpl, bent_pose());
  geom::MatX3<R> plain = geom::pose_template(tpl, bent_pose());
  Tensor<R> got = fm.verts.val();
  R dev = 0;
  for (Index v = 0; v < 10; ++v)
    dev = std::max(dev, (got.mat(10, 3).row(v) - plain.row(v)).norm());
  CHECK(dev > 0.0);
  CHECK(dev <= dmax + 1e-12);
}

TEST_CASE("albedo head output conditions the displacement head") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(24);
  nets.init(tpl, rng);
  randomize(nets.params.values.at("phi_d.fc1.w"), rng, 1.0);

  auto disp_at = [&](const nn::Params<R>& p) {
    Tape<R> tape;
    avatar::EmbeddingNets<R> n2 = nets;
    n2.params = p;
    nn::Bound<R> b = nn::bind(tape, n2.params, false);
    return avatar::predict(tape, b, n2, bent_pose()).disp.val();
  };

  Tensor<R> d0 = disp_at(nets.params);
  nn::Params<R> perturbed = nets.params;
  randomize(perturbed.values.at("phi_rho.fc1.w"), rng, 2.0);
  Tensor<R> d1 = disp_at(perturbed);
  CHECK((d0.data - d1.data).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("mean albedo is the arithmetic mean over the pose set") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(25);
  nets.init(tpl, rng);
  // make albedo pose-dependent
  randomize(nets.params.values.at("phi_rho.fc0.w"), rng, 0.5);
  randomize(nets.params.values.at("phi_rho.fc1.w"), rng, 0.5);

  Pose<R> pa = Pose<R>::identity(2);
  Pose<R> pb = bent_pose();
  Tape<R> tape;
  nn::Bound<R> b = nn::bind(tape, nets.params, false);
  Tensor<R> ra = avatar::predict(tape, b, nets, pa).albedo.val();
  Tensor<R> rb = avatar::predict(tape, b, nets, pb).albedo.val();
  CHECK((ra.data - rb.data).cwiseAbs().maxCoeff() > 1e-6);

  Tensor<R> single = avatar::mean_albedo(tape, b, nets, {pa}).val();
  CHECK((single.data - ra.data).cwiseAbs().maxCoeff() < 1e-15);
  Tensor<R> both = avatar::mean_albedo(tape, b, nets, {pa, pb}).val();
  CHECK((both.data - 0.5 * (ra.data + rb.data)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(avatar::mean_albedo(tape, b, nets, {}), ConfigError);
}

TEST_CASE("training gradients reach the codes and every head") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(26);
  nets.init(tpl, rng);

  Rng rw(27);
  Tensor<R> wv({10, 3}), wa({10, 3});
  randomize(wv, rw, 1.0);
  randomize(wa, rw, 1.0);
  {
    // zero-initialized final layers still receive gradient themselves
    Tape<R> tape;
    nn::Bound<R> b = nn::bind(tape, nets.params, true);
    auto fm = avatar::pose_fine(tape, b, nets, tpl, bent_pose());
    Var<R> l = sum(fm.verts * make_const(tape, wv)) + sum(fm.albedo * make_const(tape, wa));
    tape.backward(l.id);
    CHECK(tape.grad(b["phi_d.fc1.w"].id).data.cwiseAbs().maxCoeff() > 0.0);
    CHECK(tape.grad(b["phi_rho.fc1.w"].id).data.cwiseAbs().maxCoeff() > 0.0);
    CHECK(tape.grad(b["phi_w.fc1.w"].id).data.cwiseAbs().maxCoeff() > 0.0);
    // a zero final layer passes nothing upstream yet
    CHECK(tape.grad(b["codes"].id).data.cwiseAbs().maxCoeff() == 0.0);
  }

  // once the final layers move, the codes start learning
  randomize(nets.params.values.at("phi_d.fc1.w"), rng, 0.5);
  {
    Tape<R> tape;
    nn::Bound<R> b = nn::bind(tape, nets.params, true);
    auto fm = avatar::pose_fine(tape, b, nets, tpl, bent_pose());
    Var<R> l = sum(fm.verts * make_const(tape, wv)) + sum(fm.albedo * make_const(tape, wa));
    tape.backward(l.id);
    CHECK(tape.grad(b["codes"].id).data.cwiseAbs().maxCoeff() > 0.0);
    CHECK(tape.grad(b["phi_d.fc0.w"].id).data.cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("fine mesh gradient matches finite differences") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(28);
  nets.init(tpl, rng);
  randomize(nets.params.values.at("phi_d.fc1.w"), rng, 0.5);
  randomize(nets.params.values.at("phi_w.fc1.w"), rng, 0.2);
  randomize(nets.params.values.at("phi_rho.fc1.w"), rng, 0.5);

  Rng rw(29);
  Tensor<R> wv({10, 3});
  randomize(wv, rw, 1.0);
  Pose<R> pose = bent_pose();
  auto eval = [&](const nn::Params<R>& p) {
    Tape<R> t;
    avatar::EmbeddingNets<R> n2 = nets;
    n2.params = p;
    nn::Bound<R> b = nn::bind(t, n2.params, false);
    auto fm = avatar::pose_fine(t, b, n2, tpl, pose);
    return sum(fm.verts * make_const(t, wv)).val().data[0];
  };

  Tape<R> tape;
  nn::Bound<R> b = nn::bind(tape, nets.params, true);
  auto fm = avatar::pose_fine(tape, b, nets, tpl, pose);
  Var<R> l = sum(fm.verts * make_const(tape, wv));
  tape.backward(l.id);

  for (const std::string& pname : {std::string("codes"), std::string("phi_d.fc0.w"),
                                   std::string("phi_w.fc1.w"), std::string("phi_rho.fc0.w")}) {
    Tensor<R> analytic = tape.grad(b[pname].id);
    Tensor<R> fd = fd_gradient<R>(nets.params.at(pname), [&](const Tensor<R>& t) {
      nn::Params<R> pc = nets.params;
      pc.values[pname] = t;
      return eval(pc);
    });
    CHECK(max_rel_error<R>(analytic, fd, 1e-8) < 1e-4);
  }
}

TEST_CASE("nets initialized for one template reject another") {
  auto t1 = geom::subdivide(make_tet(), 1);
  auto t2 = geom::subdivide(make_tet(), 2);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(30);
  nets.init(t1, rng);
  Tape<R> tape;
  nn::Bound<R> b = nn::bind(tape, nets.params, false);
  CHECK_THROWS_AS(avatar::pose_fine(tape, b, nets, t2, Pose<R>::identity(2)), ConfigError);
}

TEST_CASE("detached evaluation returns unit normals and init albedo") {
  auto tpl = geom::subdivide(make_tet(), 1);
  avatar::EmbeddingNets<R> nets;
  nets.cfg = small_config();
  Rng rng(31);
  nets.init(tpl, rng);
  auto vals = avatar::evaluate(nets, tpl, bent_pose());
  CHECK(vals.verts.shape == Shape{10, 3});
  CHECK(vals.normals.shape == Shape{10, 3});
  for (Index v = 0; v < 10; ++v)
    CHECK(vals.normals.mat(10, 3).row(v).norm() == doctest::Approx(1.0));
  CHECK((vals.albedo.data.array() - 0.5).abs().maxCoeff() == 0.0);
}
