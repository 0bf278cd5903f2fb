#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "srhand/avatar.h"
#include "srhand/config.h"
#include "srhand/finetune.h"
#include "srhand/giif.h"
#include "srhand/io.h"
#include "srhand/metrics.h"
#include "srhand/synthdata.h"

using R = double;
using srhand::Index;
using srhand::Shape;
using srhand::Tensor;
namespace cfg = srhand::cfg;
namespace io = srhand::io;
namespace geom = srhand::geom;
namespace synth = srhand::synth;
namespace giif = srhand::giif;
namespace avatar = srhand::avatar;
namespace ft = srhand::ft;
namespace metric = srhand::metric;
namespace nn = srhand::nn;
namespace loss = srhand::loss;
namespace render = srhand::render;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void write_run_manifest(const std::string& out, const std::string& command,
                        const cfg::RunConfig& rc, const Timer& timer) {
  io::json j;
  j["schema_version"] = 1;
  j["command"] = command;
  j["config_hash"] = rc.hash();
  j["seed"] = rc.seed;
  j["versions"] = {{"dataset", 1}, {"checkpoint", 1}};
  j["timings"] = {{"total_s", timer.seconds()}};
  io::write_json_file(out + "/run.json", j);
  io::json c;
  c["canonical"] = rc.canonical();
  io::write_json_file(out + "/config.json", c);
}

// ---- checkpoint metadata round-trips ----

io::json giif_meta(const giif::GiifModel<R>& m) {
  return {{"kind", "giif"},
          {"config",
           {{"c_img", m.cfg.c_img},
            {"c_n", m.cfg.c_n},
            {"use_normal", m.cfg.use_normal},
            {"local_ensemble", m.cfg.local_ensemble},
            {"feat_unfold", m.cfg.feat_unfold},
            {"cell_decode", m.cfg.cell_decode},
            {"hidden", m.cfg.decoder_hidden},
            {"tile", m.cfg.tile}}}};
}

// Directories resolve to the named checkpoint file inside them.
std::string resolve_ckpt(const std::string& path, const std::string& name) {
  return std::filesystem::is_directory(path) ? path + "/" + name : path;
}

giif::GiifModel<R> load_giif(const std::string& path_in) {
  std::string path = resolve_ckpt(path_in, "giif.ckpt");
  nn::Params<R> p;
  io::json meta = io::load_params(path, p);
  if (meta.value("kind", "") != "giif") throw srhand::IoError("not a giif checkpoint: " + path);
  const io::json& c = meta.at("config");
  giif::GiifConfig gc;
  gc.c_img = c.at("c_img").get<Index>();
  gc.c_n = c.at("c_n").get<Index>();
  gc.use_normal = c.at("use_normal").get<bool>();
  gc.local_ensemble = c.at("local_ensemble").get<bool>();
  gc.feat_unfold = c.at("feat_unfold").get<bool>();
  gc.cell_decode = c.at("cell_decode").get<bool>();
  gc.decoder_hidden = c.at("hidden").get<std::vector<Index>>();
  gc.tile = c.at("tile").get<Index>();
  giif::GiifModel<R> m(gc);
  m.params = std::move(p);
  return m;
}

io::json avatar_meta(const avatar::EmbeddingNets<R>& nets) {
  return {{"kind", "avatar"},
          {"verts", nets.verts},
          {"joints", nets.joints},
          {"config",
           {{"code_dim", nets.cfg.code_dim},
            {"hidden", nets.cfg.head_hidden},
            {"d_max", nets.cfg.d_max},
            {"color_conditioned", nets.cfg.color_conditioned}}}};
}

avatar::EmbeddingNets<R> load_avatar(const std::string& path) {
  nn::Params<R> p;
  io::json meta = io::load_params(path, p);
  if (meta.value("kind", "") != "avatar")
    throw srhand::IoError("not an avatar checkpoint: " + path);
  const io::json& c = meta.at("config");
  avatar::EmbeddingNets<R> nets;
  nets.cfg.code_dim = c.at("code_dim").get<Index>();
  nets.cfg.head_hidden = c.at("hidden").get<std::vector<Index>>();
  nets.cfg.d_max = c.at("d_max").get<double>();
  nets.cfg.color_conditioned = c.at("color_conditioned").get<bool>();
  nets.verts = meta.at("verts").get<Index>();
  nets.joints = meta.at("joints").get<Index>();
  nets.params = std::move(p);
  return nets;
}

giif::Discriminator<R> load_disc(const std::string& path) {
  nn::Params<R> p;
  io::json meta = io::load_params(path, p);
  if (meta.value("kind", "") != "disc")
    throw srhand::IoError("not a discriminator checkpoint: " + path);
  giif::Discriminator<R> d;
  d.feat = meta.at("feat").get<Index>();
  d.params = std::move(p);
  return d;
}

giif::GiifConfig giif_config_from(const cfg::RunConfig& rc) {
  giif::GiifConfig gc;
  gc.c_img = rc.giif.c_img;
  gc.c_n = rc.giif.c_n;
  gc.use_normal = rc.giif.use_normal;
  gc.local_ensemble = rc.giif.local_ensemble;
  gc.feat_unfold = rc.giif.feat_unfold;
  gc.cell_decode = rc.giif.cell_decode;
  gc.decoder_hidden = rc.giif.hidden;
  gc.tile = rc.giif.tile;
  return gc;
}

avatar::AvatarConfig avatar_config_from(const cfg::RunConfig& rc) {
  avatar::AvatarConfig ac;
  ac.code_dim = rc.avatar.code_dim;
  ac.head_hidden = rc.avatar.hidden;
  ac.d_max = rc.avatar.d_max;
  ac.color_conditioned = rc.avatar.color_conditioned;
  return ac;
}

ft::PipelineConfig<R> pipeline_config_from(const cfg::RunConfig& rc) {
  ft::PipelineConfig<R> pc;
  pc.lr_avatar = rc.finetune.lr_avatar;
  pc.lr_decoder = rc.finetune.lr_decoder;
  pc.w_rgb = rc.losses.w_rgb;
  pc.lambda_perc = rc.losses.lambda_perc;
  pc.w_lap_albedo = rc.losses.w_lap_albedo;
  pc.w_lap_disp = rc.losses.w_lap_disp;
  pc.w_edge = rc.losses.w_edge;
  pc.lambda_mean_tex = rc.losses.lambda_mean_tex;
  pc.part_weights = rc.losses.part_weights;
  pc.aft = {rc.finetune.w_consistency, rc.finetune.w_wavelet, rc.finetune.w_realism};
  pc.u_max = rc.finetune.u_max;
  pc.u_floor = rc.finetune.u_floor;
  pc.divergence_factor = rc.finetune.divergence_factor;
  return pc;
}

ft::FinetuneSchedule schedule_from(const cfg::RunConfig& rc) {
  ft::FinetuneSchedule s;
  s.epochs = rc.finetune.epochs;
  s.fine_steps = rc.finetune.fine_steps;
  s.fine_every = rc.finetune.fine_every;
  s.fine_start = rc.finetune.fine_start;
  return s;
}

// Flat [3, Q] copy of an HR crop, rows matching query order.
Tensor<R> crop_flat(const Tensor<R>& img, Index r0, Index c0, Index c) {
  Index H = img.shape[1], W = img.shape[2];
  Tensor<R> out({3, c * c});
  for (Index ch = 0; ch < 3; ++ch)
    for (Index i = 0; i < c; ++i)
      for (Index j = 0; j < c; ++j)
        out.data[ch * c * c + i * c + j] = img.data[ch * H * W + (r0 + i) * W + (c0 + j)];
  return out;
}

Tensor<R> crop_coords(Index r0, Index c0, Index c, Index H, Index W) {
  Tensor<R> out({c * c, 2});
  for (Index i = 0; i < c; ++i)
    for (Index j = 0; j < c; ++j) {
      out.data[(i * c + j) * 2 + 0] = giif::latent_coord<R>(r0 + i, H);
      out.data[(i * c + j) * 2 + 1] = giif::latent_coord<R>(c0 + j, W);
    }
  return out;
}

std::vector<Index> split_views(const io::LoadedDataset& ds, const std::string& split) {
  if (split == "train") return ds.header.train_views;
  if (split == "eval")
    return ds.header.eval_views.empty() ? ds.header.train_views : ds.header.eval_views;
  std::vector<Index> all = ds.header.train_views;
  all.insert(all.end(), ds.header.eval_views.begin(), ds.header.eval_views.end());
  return all;
}

// Plain render of the avatar through a camera: SH-shaded vertex colors,
// black background, [3,H,W].
Tensor<R> render_avatar_view(const avatar::AvatarValues<R>& av,
                             const geom::SkinnedTemplate<R>& tpl, const geom::MatX<R>& light,
                             const geom::Camera<R>& cam) {
  Index V = tpl.num_vertices();
  geom::MatX3<R> verts = av.verts.mat(V, 3);
  geom::MatX<R> shaded =
      render::shade_sh_plain<R>(av.albedo.mat(V, 3), av.normals.mat(V, 3), light);
  render::RasterResult<R> ras = render::rasterize_mesh<R>(verts, tpl.faces, cam);
  Tensor<R> img = render::interpolate_attr<R>(ras, tpl.faces, shaded);
  for (Index i = 0; i < img.data.size(); ++i) img.data[i] = std::clamp(img.data[i], 0.0, 1.0);
  return img;
}

int file_exists(const std::string& p) { return std::filesystem::exists(p) ? 1 : 0; }

// ---- commands ----

struct SynthArgs {
  std::string config, out;
  Index views = -1, frames = -1, hr = -1, scale = -1, subdiv = -1;
  double radius = -1;
  long long seed = -1;
  bool force = false;
};

int cmd_synth_data(const SynthArgs& a) {
  Timer timer;
  cfg::RunConfig rc;
  if (!a.config.empty()) rc = cfg::RunConfig::load(a.config);
  if (a.views >= 0) rc.data.views = a.views;
  if (a.frames >= 0) rc.data.frames = a.frames;
  if (a.hr >= 0) rc.data.hr = a.hr;
  if (a.scale >= 0) rc.data.scale = a.scale;
  if (a.subdiv >= 0) rc.data.subdiv = a.subdiv;
  if (a.radius >= 0) rc.data.radius = a.radius;
  if (a.seed >= 0) rc.seed = static_cast<std::uint64_t>(a.seed);
  rc.validate();
  io::prepare_out_dir(a.out, a.force);

  synth::SynthHand<R> hand =
      synth::build_template<R>(rc.seed, static_cast<int>(rc.data.subdiv));
  std::vector<geom::Pose<R>> poses = synth::sample_poses<R>(rc.data.frames, rc.seed);
  std::vector<geom::Camera<R>> rig =
      synth::build_rig<R>(rc.data.views, rc.data.radius, rc.data.hr);
  synth::SynthDataset<R> ds = synth::generate(hand, poses, rig, rc.data.hr, rc.data.scale);
  io::write_dataset(ds, a.out, rc.seed, rc.resolved_holdout());
  write_run_manifest(a.out, "synth-data", rc, timer);
  std::printf("wrote %lld frames x %lld views to %s (bicubic baseline %.2f dB)\n",
              static_cast<long long>(rc.data.frames), static_cast<long long>(rc.data.views),
              a.out.c_str(), ds.bicubic_psnr);
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  Index epochs = -1;
  long long seed = -1;
  bool no_normal = false, force = false;
};

// L1 on random aligned HR crops plus a small adversarial term; the
// discriminator trains on the alternating step.
int cmd_train_giif(const TrainArgs& a) {
  Timer timer;
  cfg::RunConfig rc;
  if (!a.config.empty()) rc = cfg::RunConfig::load(a.config);
  if (a.epochs >= 0) rc.giif.epochs = a.epochs;
  if (a.seed >= 0) rc.seed = static_cast<std::uint64_t>(a.seed);
  if (a.no_normal) rc.giif.use_normal = false;
  rc.validate();
  io::prepare_out_dir(a.out, a.force);
  io::LoadedDataset ds = io::load_dataset(a.data);

  giif::GiifModel<R> model(giif_config_from(rc));
  srhand::Rng rng_init(srhand::mix_seed(rc.seed, 201));
  model.init(rng_init);
  giif::Discriminator<R> disc;
  disc.feat = rc.giif.disc_feat;
  srhand::Rng rng_disc(srhand::mix_seed(rc.seed, 202));
  disc.init(rng_disc);

  std::vector<std::pair<Index, Index>> pairs;
  for (Index f = 0; f < ds.header.frames; ++f)
    for (Index v : ds.header.train_views) pairs.emplace_back(f, v);
  if (pairs.empty()) throw srhand::ConfigError("dataset has no training views");

  Index crop = std::min<Index>(rc.giif.crop, ds.header.hr_size);
  nn::Adam<R> opt_g(rc.giif.lr), opt_d(rc.giif.disc_lr);
  srhand::Rng rng(srhand::mix_seed(rc.seed, 203));

  for (Index epoch = 1; epoch <= rc.giif.epochs; ++epoch) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    R sum_l1 = 0;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      auto [f, v] = pairs[order[oi]];
      const auto& view = ds.scene.frames[static_cast<std::size_t>(f)]
                             .views[static_cast<std::size_t>(v)];
      Index H = view.hr.shape[1], W = view.hr.shape[2];
      Index r0 = rng.uniform_int(0, static_cast<int>(H - crop));
      Index c0 = rng.uniform_int(0, static_cast<int>(W - crop));
      Tensor<R> coords = crop_coords(r0, c0, crop, H, W);
      Tensor<R> cell = giif::cell_for<R>(crop * crop, H, W);
      Tensor<R> target = crop_flat(view.hr, r0, c0, crop);

      Tensor<R> fake_img;
      {
        srhand::Tape<R> tape;
        nn::Bound<R> b = nn::bind(tape, model.params, true);
        giif::LatentGrid<R> grid = model.prepare(tape, b, view.lr, view.normal_lr);
        srhand::Var<R> pred = model.query_rgb(tape, b, grid, coords, cell, true);
        srhand::Var<R> total = loss::l1_all(pred, srhand::make_const(tape, target));
        sum_l1 += total.val().data[0];
        if (rc.giif.w_adv > 0) {
          nn::Bound<R> bd = nn::bind(tape, disc.params, false);
          srhand::Var<R> img = srhand::reshape_op(pred, {3, crop, crop});
          total = total + srhand::scale(ft::disc_loss(disc, bd, img), rc.giif.w_adv);
          fake_img = img.val();
        }
        tape.backward(total.id);
        opt_g.step(model.params, b);
      }

      if (rc.giif.w_adv > 0) {
        srhand::Tape<R> tape;
        nn::Bound<R> bd = nn::bind(tape, disc.params, true);
        Tensor<R> real_img = target;
        real_img.shape = {3, crop, crop};
        srhand::Var<R> d_real = disc(bd, srhand::make_const(tape, real_img), true);
        srhand::Var<R> log_real =
            srhand::log_op(srhand::clamp(d_real, R(1e-6), R(1) - R(1e-6)));
        srhand::Var<R> log_fake = ft::disc_loss(disc, bd, srhand::make_const(tape, fake_img));
        srhand::Var<R> d_total = srhand::neg(log_real + log_fake);
        tape.backward(d_total.id);
        opt_d.step(disc.params, bd);
      }
    }
    std::printf("epoch %lld/%lld  train L1 %.5f\n", static_cast<long long>(epoch),
                static_cast<long long>(rc.giif.epochs),
                sum_l1 / static_cast<R>(pairs.size()));
  }

  io::save_params(a.out + "/giif.ckpt", model.params, giif_meta(model));
  io::save_params(a.out + "/disc.ckpt", disc.params,
                  io::json{{"kind", "disc"}, {"feat", disc.feat}});
  write_run_manifest(a.out, "train-giif", rc, timer);
  return 0;
}

struct SrArgs {
  std::string ckpt, data, out;
  Index scale = -1, size = -1;
  bool force = false;
};

int cmd_sr(const SrArgs& a) {
  Timer timer;
  if ((a.scale < 0) == (a.size < 0))
    throw srhand::ConfigError("pass exactly one of --scale or --size");
  if (a.scale == 0 || a.size == 0) throw srhand::ConfigError("target must be positive");
  io::prepare_out_dir(a.out, a.force);
  io::LoadedDataset ds = io::load_dataset(a.data);
  giif::GiifModel<R> model = load_giif(a.ckpt);

  for (std::size_t f = 0; f < ds.scene.frames.size(); ++f) {
    for (std::size_t v = 0; v < ds.scene.frames[f].views.size(); ++v) {
      const auto& view = ds.scene.frames[f].views[v];
      Index h = view.lr.shape[1], w = view.lr.shape[2];
      Index Hout = a.scale > 0 ? h * a.scale : a.size;
      Index Wout = a.scale > 0 ? w * a.scale : a.size;
      if (Hout <= h || Wout <= w)
        throw srhand::ConfigError("target size must be larger than the input");
      Tensor<R> sr = model.super_resolve(view.lr, view.normal_lr, Hout, Wout);
      for (Index i = 0; i < sr.data.size(); ++i) sr.data[i] = std::clamp(sr.data[i], 0.0, 1.0);
      io::write_png(a.out + "/sr_f" + std::to_string(f) + "_v" + std::to_string(v) + ".png",
                    sr);
    }
  }
  cfg::RunConfig rc;
  write_run_manifest(a.out, "sr", rc, timer);
  return 0;
}

struct ReconstructArgs {
  std::string config, data, giif_ckpt, out;
  long long seed = -1;
  bool no_finetune = false, force = false;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  Timer timer;
  cfg::RunConfig rc;
  if (!a.config.empty()) rc = cfg::RunConfig::load(a.config);
  if (a.seed >= 0) rc.seed = static_cast<std::uint64_t>(a.seed);
  rc.validate();
  io::prepare_out_dir(a.out, a.force);
  io::LoadedDataset ds = io::load_dataset(a.data);
  srhand::scene::Scene<R> train = io::subscene(ds.scene, ds.header.train_views);

  giif::GiifModel<R> model = load_giif(a.giif_ckpt);
  giif::Discriminator<R> disc;
  bool have_disc = false;
  std::string resolved = resolve_ckpt(a.giif_ckpt, "giif.ckpt");
  std::string disc_path = std::filesystem::path(resolved).parent_path() / "disc.ckpt";
  if (file_exists(disc_path)) {
    disc = load_disc(disc_path);
    have_disc = true;
  }

  avatar::EmbeddingNets<R> nets;
  nets.cfg = avatar_config_from(rc);
  srhand::Rng rng(srhand::mix_seed(rc.seed, 301));
  nets.init(train.tpl, rng);

  ft::FinetuneSchedule sched = schedule_from(rc);
  if (a.no_finetune) {
    sched.fine_every = sched.epochs + 1;  // no round ever fires; SR stays frozen
    sched.fine_start = 0;
  }
  ft::PipelineConfig<R> pc = pipeline_config_from(rc);

  io::ensure_dir(a.out + "/rounds");
  ft::RoundSink<R> sink = [&](Index round, const ft::PipelineResult<R>& res) {
    std::string dir = a.out + "/rounds/" + std::to_string(round);
    io::ensure_dir(dir);
    for (std::size_t f = 0; f < res.i_sr.size(); ++f)
      for (std::size_t v = 0; v < res.i_sr[f].size(); ++v) {
        Tensor<R> img = res.i_sr[f][v];
        for (Index i = 0; i < img.data.size(); ++i)
          img.data[i] = std::clamp(img.data[i], 0.0, 1.0);
        io::write_png(dir + "/sr_f" + std::to_string(f) + "_v" + std::to_string(v) + ".png",
                      img);
      }
  };

  ft::PipelineResult<R> res;
  try {
    res = ft::run_pipeline<R>(train, model, have_disc ? &disc : nullptr, nets, sched, pc, sink);
  } catch (const srhand::DivergenceError& e) {
    std::ofstream f(a.out + "/divergence.txt");
    f << e.what() << "\n";
    throw;
  }

  {
    std::ofstream f(a.out + "/events.csv");
    f << "epoch,kind\n";
    for (const auto& ev : res.events) f << ev.epoch << "," << ev.kind << "\n";
  }
  {
    std::ofstream f(a.out + "/epochs.csv");
    f << "epoch,l3d,l_aft\n";
    for (const auto& log : res.log) f << log.epoch << "," << log.l3d << "," << log.l_aft << "\n";
  }
  io::save_params(a.out + "/avatar.ckpt", nets.params, avatar_meta(nets));
  io::save_params(a.out + "/giif_finetuned.ckpt", model.params, giif_meta(model));
  write_run_manifest(a.out, "reconstruct", rc, timer);
  std::printf("reconstruction finished: %lld epochs, %lld fine-tune rounds\n",
              static_cast<long long>(sched.epochs), static_cast<long long>(res.rounds));
  return 0;
}

struct EvalArgs {
  std::string run, data, split, config;
};

int cmd_eval(const EvalArgs& a) {
  Timer timer;
  cfg::RunConfig rc;
  if (!a.config.empty()) rc = cfg::RunConfig::load(a.config);
  std::string split = a.split.empty() ? rc.eval.split : a.split;
  if (split != "eval" && split != "train" && split != "all")
    throw srhand::ConfigError("--split must be eval, train, or all");

  io::LoadedDataset ds = io::load_dataset(a.data);
  giif::GiifModel<R> model = load_giif(a.run + "/giif_finetuned.ckpt");
  avatar::EmbeddingNets<R> nets = load_avatar(a.run + "/avatar.ckpt");
  if (nets.verts != ds.hand.tpl.num_vertices())
    throw srhand::ConfigError("avatar checkpoint does not match the dataset template");

  std::vector<Index> views = split_views(ds, split);
  if (views.empty()) throw srhand::ConfigError("split selects no views");
  Index V = ds.hand.tpl.num_vertices();
  loss::Perceptual<R> perc;

  std::vector<metric::EvalRow> rows;
  std::vector<geom::MatX3<R>> posed;
  std::vector<std::vector<geom::Camera<R>>> cams;
  std::vector<std::vector<Tensor<R>>> sr_images;
  double p2p_sum = 0;

  for (Index f = 0; f < ds.header.frames; ++f) {
    const auto& frame = ds.scene.frames[static_cast<std::size_t>(f)];
    avatar::AvatarValues<R> av = avatar::evaluate(nets, ds.hand.tpl, frame.pose);
    posed.push_back(av.verts.mat(V, 3));
    p2p_sum += metric::p2p<R>(posed.back(), ds.gt_verts[static_cast<std::size_t>(f)],
                              ds.header.unit_mm);
    cams.emplace_back();
    sr_images.emplace_back();

    for (Index v : views) {
      const auto& view = frame.views[static_cast<std::size_t>(v)];
      Tensor<R> sr = model.super_resolve(view.lr, view.normal_lr, view.hr.shape[1],
                                         view.hr.shape[2]);
      for (Index i = 0; i < sr.data.size(); ++i) sr.data[i] = std::clamp(sr.data[i], 0.0, 1.0);
      Tensor<R> avimg = render_avatar_view(av, ds.hand.tpl, ds.scene.light, view.cam);

      metric::EvalRow row;
      row.frame = f;
      row.view = v;
      row.psnr_sr = metric::psnr<R>(sr, view.hr);
      row.ssim_sr = metric::ssim<R>(sr, view.hr);
      row.lpips_sr = metric::lpips_proxy<R>(perc, sr, view.hr);
      row.psnr_3d = metric::psnr<R>(avimg, view.hr);
      row.lpips_3d = metric::lpips_proxy<R>(perc, avimg, view.hr);
      rows.push_back(row);

      cams.back().push_back(view.cam);
      sr_images.back().push_back(std::move(sr));
    }
  }

  ft::VertexStats<R> stats =
      ft::vertex_color_stats<R>(posed, ds.hand.tpl.faces, cams, sr_images);
  double incon = metric::inconsistency<R>(stats);
  double p2p_mm = p2p_sum / static_cast<double>(ds.header.frames);
  metric::EvalReport report = metric::finalize_report(rows, p2p_mm, incon);

  io::ensure_dir(a.run + "/eval");
  io::json j;
  j["schema_version"] = 1;
  j["split"] = split;
  j["bicubic_psnr"] = ds.header.bicubic_psnr;
  j["psnr_sr"] = report.psnr_sr;
  j["ssim"] = report.ssim;
  j["lpips_sr"] = report.lpips_sr;
  j["psnr_3d"] = report.psnr_3d;
  j["lpips_3d"] = report.lpips_3d;
  j["p2p_mm"] = report.p2p_mm;
  j["inconsistency"] = report.inconsistency;
  io::write_json_file(a.run + "/eval/report.json", j);
  {
    std::ofstream f(a.run + "/eval/report.csv");
    f << "frame,view,psnr_sr,ssim_sr,lpips_sr,psnr_3d,lpips_3d\n";
    for (const auto& r : rows)
      f << r.frame << "," << r.view << "," << r.psnr_sr << "," << r.ssim_sr << ","
        << r.lpips_sr << "," << r.psnr_3d << "," << r.lpips_3d << "\n";
  }
  (void)timer;
  std::printf("split=%s  psnr_sr=%.3f  ssim=%.4f  lpips=%.5f  psnr_3d=%.3f  p2p=%.3fmm  "
              "incon=%.6f  (bicubic %.3f)\n",
              split.c_str(), report.psnr_sr, report.ssim, report.lpips_sr, report.psnr_3d,
              report.p2p_mm, report.inconsistency, ds.header.bicubic_psnr);
  return 0;
}

struct ExportArgs {
  std::string run, data, format = "obj", out;
  Index pose = 0;
};

int cmd_export_mesh(const ExportArgs& a) {
  if (a.format != "obj" && a.format != "ply")
    throw srhand::ConfigError("--format must be obj or ply");
  io::LoadedDataset ds = io::load_dataset(a.data);
  if (a.pose < 0 || a.pose >= ds.header.frames)
    throw srhand::ConfigError("--pose out of range");
  avatar::EmbeddingNets<R> nets = load_avatar(a.run + "/avatar.ckpt");
  if (nets.verts != ds.hand.tpl.num_vertices())
    throw srhand::ConfigError("avatar checkpoint does not match the dataset template");
  avatar::AvatarValues<R> av =
      avatar::evaluate(nets, ds.hand.tpl, ds.poses[static_cast<std::size_t>(a.pose)]);
  Index V = ds.hand.tpl.num_vertices();
  geom::MatX3<R> verts = av.verts.mat(V, 3);
  geom::MatX3<R> colors = av.albedo.mat(V, 3);
  std::string out = a.out.empty()
                        ? a.run + "/mesh_pose" + std::to_string(a.pose) + "." + a.format
                        : a.out;
  if (a.format == "obj")
    io::write_obj(out, verts, ds.hand.tpl.faces, &colors);
  else
    io::write_ply(out, verts, ds.hand.tpl.faces, &colors);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand avatar super-resolution toolkit"};
  app.require_subcommand(0, 1);

  SynthArgs sa;
  CLI::App* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth_cmd->add_option("--config", sa.config, "TOML config file");
  synth_cmd->add_option("--out", sa.out, "output dataset directory")->required();
  synth_cmd->add_option("--views", sa.views, "camera count");
  synth_cmd->add_option("--frames", sa.frames, "pose count");
  synth_cmd->add_option("--hr", sa.hr, "HR image size");
  synth_cmd->add_option("--scale", sa.scale, "SR factor");
  synth_cmd->add_option("--subdiv", sa.subdiv, "subdivision rounds");
  synth_cmd->add_option("--radius", sa.radius, "camera orbit radius");
  synth_cmd->add_option("--seed", sa.seed, "global seed");
  synth_cmd->add_flag("--force", sa.force, "allow a non-empty output directory");

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train-giif", "train the SR model");
  train_cmd->add_option("--config", ta.config, "TOML config file");
  train_cmd->add_option("--data", ta.data, "dataset directory")->required();
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  train_cmd->add_option("--epochs", ta.epochs, "training epochs");
  train_cmd->add_option("--seed", ta.seed, "global seed");
  train_cmd->add_flag("--no-normal", ta.no_normal, "train without normal conditioning");
  train_cmd->add_flag("--force", ta.force, "allow a non-empty output directory");

  SrArgs ra;
  CLI::App* sr_cmd = app.add_subcommand("sr", "super-resolve dataset images");
  sr_cmd->add_option("--ckpt", ra.ckpt, "model checkpoint")->required();
  sr_cmd->add_option("--data", ra.data, "dataset directory")->required();
  sr_cmd->add_option("--scale", ra.scale, "integer upscaling factor");
  sr_cmd->add_option("--size", ra.size, "output size in pixels");
  sr_cmd->add_option("--out", ra.out, "output directory")->required();
  sr_cmd->add_flag("--force", ra.force, "allow a non-empty output directory");

  ReconstructArgs ca;
  CLI::App* rec_cmd = app.add_subcommand("reconstruct", "fit the avatar and fine-tune SR");
  rec_cmd->add_option("--config", ca.config, "TOML config file");
  rec_cmd->add_option("--data", ca.data, "dataset directory")->required();
  rec_cmd->add_option("--giif-ckpt,--giif", ca.giif_ckpt, "SR checkpoint")->required();
  rec_cmd->add_option("--out", ca.out, "output run directory")->required();
  rec_cmd->add_option("--seed", ca.seed, "global seed");
  rec_cmd->add_flag("--no-finetune", ca.no_finetune, "keep the SR model frozen");
  rec_cmd->add_flag("--force", ca.force, "allow a non-empty output directory");

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a reconstruction run");
  eval_cmd->add_option("--run,--pred", ea.run, "reconstruction run directory")->required();
  eval_cmd->add_option("--data", ea.data, "dataset directory")->required();
  eval_cmd->add_option("--split", ea.split, "view split: eval | train | all");
  eval_cmd->add_option("--config", ea.config, "TOML config file");

  ExportArgs xa;
  CLI::App* export_cmd = app.add_subcommand("export-mesh", "export the fitted mesh");
  export_cmd->add_option("--run", xa.run, "reconstruction run directory")->required();
  export_cmd->add_option("--data", xa.data, "dataset directory")->required();
  export_cmd->add_option("--pose", xa.pose, "frame index");
  export_cmd->add_option("--format", xa.format, "obj | ply");
  export_cmd->add_option("--out", xa.out, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth_data(sa);
    if (train_cmd->parsed()) return cmd_train_giif(ta);
    if (sr_cmd->parsed()) return cmd_sr(ra);
    if (rec_cmd->parsed()) return cmd_reconstruct(ca);
    if (eval_cmd->parsed()) return cmd_eval(ea);
    if (export_cmd->parsed()) return cmd_export_mesh(xa);
    std::cout << app.help();
    return 0;
  } catch (const srhand::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const srhand::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const srhand::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
