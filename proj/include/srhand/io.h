#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "srhand/camera.h"
#include "srhand/common.h"
#include "srhand/nn.h"
#include "srhand/scene.h"
#include "srhand/skinning.h"
#include "srhand/synthdata.h"
#include "srhand/tensor.h"

namespace srhand::io {

using json = nlohmann::json;

// png_io.cpp; images are linear [0,1], stored as 8-bit gray or RGB
void write_png(const std::string& path, const Tensor<double>& img);
Tensor<double> read_png(const std::string& path);
void write_float_image(const std::string& path, const Tensor<double>& img);
Tensor<double> read_float_image(const std::string& path);

inline void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

// Output-directory guard: refuses to reuse a non-empty directory unless forced.
inline void prepare_out_dir(const std::string& path, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) {
    if (!fs::is_directory(path)) throw IoError("output path is not a directory: " + path);
    if (!fs::is_empty(path) && !force)
      throw IoError("output directory not empty (use --force): " + path);
  }
  ensure_dir(path);
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("short write: " + path);
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw IoError("invalid json in " + path);
  return j;
}

// ---- json adapters for the geometry types ----

inline json matrix_json(const Eigen::Ref<const geom::MatX<double>>& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline geom::MatX<double> matrix_from_json(const json& j, Index cols_expected = -1) {
  if (!j.is_array()) throw IoError("expected a matrix as an array of rows");
  Index rows = static_cast<Index>(j.size());
  Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : (cols_expected >= 0 ? cols_expected : 0);
  if (cols_expected >= 0 && rows > 0 && cols != cols_expected)
    throw IoError("matrix column count mismatch");
  geom::MatX<double> m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      throw IoError("ragged matrix rows");
    for (Index c = 0; c < cols; ++c)
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline json camera_json(const geom::Camera<double>& cam) {
  return {{"fx", cam.fx},          {"fy", cam.fy},
          {"cx", cam.cx},          {"cy", cam.cy},
          {"width", cam.width},    {"height", cam.height},
          {"R", matrix_json(cam.R)}, {"t", {cam.t.x(), cam.t.y(), cam.t.z()}}};
}

inline geom::Camera<double> camera_from_json(const json& j) {
  geom::Camera<double> cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<Index>();
  cam.height = j.at("height").get<Index>();
  geom::MatX<double> R = matrix_from_json(j.at("R"), 3);
  if (R.rows() != 3) throw IoError("camera rotation must be 3x3");
  cam.R = R;
  const auto& t = j.at("t");
  if (t.size() != 3) throw IoError("camera translation must have 3 entries");
  cam.t = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
  cam.validate();
  return cam;
}

inline json pose_json(const geom::Pose<double>& pose) {
  json j;
  j["rotations"] = matrix_json(pose.joint_rotations);
  j["translation"] = {pose.root_translation.x(), pose.root_translation.y(),
                      pose.root_translation.z()};
  json beta = json::array();
  for (Index b = 0; b < pose.beta.size(); ++b) beta.push_back(pose.beta[b]);
  j["beta"] = std::move(beta);
  return j;
}

inline geom::Pose<double> pose_from_json(const json& j) {
  geom::Pose<double> pose;
  pose.joint_rotations = matrix_from_json(j.at("rotations"), 3);
  const auto& t = j.at("translation");
  pose.root_translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
  const auto& beta = j.at("beta");
  pose.beta.resize(static_cast<Index>(beta.size()));
  for (Index b = 0; b < pose.beta.size(); ++b)
    pose.beta[b] = beta[static_cast<std::size_t>(b)].get<double>();
  return pose;
}

// ---- skinned asset on disk ----

inline json hand_json(const synth::SynthHand<double>& hand) {
  const auto& t = hand.tpl;
  json j;
  j["schema_version"] = 1;
  j["seed"] = hand.seed;
  j["vertices"] = matrix_json(t.vertices);
  json faces = json::array();
  for (Index f = 0; f < t.faces.rows(); ++f)
    faces.push_back({t.faces(f, 0), t.faces(f, 1), t.faces(f, 2)});
  j["faces"] = std::move(faces);
  j["joints"] = matrix_json(t.joints);
  j["parent"] = t.parent;
  j["weights"] = matrix_json(t.weights);
  j["part"] = t.part;
  j["shape_basis"] = matrix_json(t.shape_basis);
  j["albedo"] = matrix_json(
      Eigen::Map<const geom::MatX<double>>(hand.albedo.data.data(), t.num_vertices(), 3));
  j["detail_disp"] = matrix_json(hand.gt_disp);
  json digits = json::array();
  for (const auto& d : hand.digits)
    digits.push_back({{"cx", d.cx}, {"cy", d.cy}, {"z_top", d.z_top}, {"len", d.len},
                      {"radius", d.radius}});
  j["digits"] = std::move(digits);
  return j;
}

inline synth::SynthHand<double> hand_from_json(const json& j) {
  synth::SynthHand<double> hand;
  hand.seed = j.at("seed").get<std::uint64_t>();
  auto& t = hand.tpl;
  t.vertices = matrix_from_json(j.at("vertices"), 3);
  const auto& faces = j.at("faces");
  t.faces.resize(static_cast<Index>(faces.size()), 3);
  for (Index f = 0; f < t.faces.rows(); ++f)
    for (int c = 0; c < 3; ++c)
      t.faces(f, c) = faces[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)].get<Index>();
  t.joints = matrix_from_json(j.at("joints"), 3);
  t.parent = j.at("parent").get<std::vector<int>>();
  t.weights = matrix_from_json(j.at("weights"), t.joints.rows());
  t.part = j.at("part").get<std::vector<int>>();
  t.shape_basis = matrix_from_json(j.at("shape_basis"));
  geom::MatX<double> albedo = matrix_from_json(j.at("albedo"), 3);
  hand.albedo = Tensor<double>::zeros({albedo.rows(), 3});
  Eigen::Map<geom::MatX<double>>(hand.albedo.data.data(), albedo.rows(), 3) = albedo;
  hand.gt_disp = matrix_from_json(j.at("detail_disp"), 3);
  for (const auto& d : j.at("digits"))
    hand.digits.push_back({d.at("cx").get<double>(), d.at("cy").get<double>(),
                           d.at("z_top").get<double>(), d.at("len").get<double>(),
                           d.at("radius").get<double>()});
  t.validate();
  return hand;
}

// ---- dataset directory ----

struct DatasetHeader {
  Index hr_size = 0, scale = 0, views = 0, frames = 0;
  double unit_mm = 1000.0;
  double bicubic_psnr = 0;
  std::uint64_t seed = 0;
  std::vector<Index> train_views, eval_views;
};

struct LoadedDataset {
  DatasetHeader header;
  synth::SynthHand<double> hand;
  std::vector<geom::Pose<double>> poses;
  std::vector<geom::Camera<double>> rig;
  scene::Scene<double> scene;  // all views, loaded images
  // ground-truth displaced posed meshes, recomputed from the asset
  std::vector<geom::MatX3<double>> gt_verts;
};

inline std::string sample_dir(Index frame, Index view) {
  return "frames/" + std::to_string(frame) + "/views/" + std::to_string(view);
}

// Normal maps store (n+1)/2; background decodes to ~0.5 gray, which the
// loader zeroes by the norm test below.
inline Tensor<double> encode_normals(const Tensor<double>& n) {
  Tensor<double> out = n;
  for (Index i = 0; i < out.data.size(); ++i) out.data[i] = (out.data[i] + 1.0) * 0.5;
  return out;
}

inline Tensor<double> decode_normals(const Tensor<double>& img) {
  if (img.shape.size() != 3 || img.shape[0] != 3) throw IoError("normal map must be RGB");
  Tensor<double> out = img;
  Index hw = img.shape[1] * img.shape[2];
  for (Index px = 0; px < hw; ++px) {
    Eigen::Vector3d n(img.data[px] * 2 - 1, img.data[hw + px] * 2 - 1,
                      img.data[2 * hw + px] * 2 - 1);
    double len = n.norm();
    n = len > 0.5 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::Zero();
    out.data[px] = n.x();
    out.data[hw + px] = n.y();
    out.data[2 * hw + px] = n.z();
  }
  return out;
}

inline void write_dataset(const synth::SynthDataset<double>& ds, const std::string& root,
                          std::uint64_t seed, Index eval_view_count) {
  Index views = static_cast<Index>(ds.rig.size());
  if (eval_view_count < 0 || eval_view_count >= views)
    throw ConfigError("held-out view count must be in [0, views)");
  json manifest;
  manifest["schema_version"] = 1;
  json header;
  header["template"] = "template.json";
  header["hr_size"] = ds.hr_size;
  header["scale"] = ds.scale;
  header["views"] = views;
  header["frames"] = static_cast<Index>(ds.frames.size());
  header["unit_mm"] = 1000.0;
  header["bicubic_psnr"] = ds.bicubic_psnr;
  header["seed"] = seed;
  header["light"] = matrix_json(ds.light);
  std::vector<Index> train_views, eval_views;
  for (Index v = 0; v < views; ++v)
    (v < views - eval_view_count ? train_views : eval_views).push_back(v);
  header["splits"] = {{"train_views", train_views}, {"eval_views", eval_views}};
  manifest["header"] = std::move(header);

  write_json_file(root + "/template.json", hand_json(ds.hand));

  json samples = json::array();
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    for (std::size_t v = 0; v < ds.frames[f].views.size(); ++v) {
      const auto& vi = ds.frames[f].views[v];
      std::string dir = sample_dir(static_cast<Index>(f), static_cast<Index>(v));
      ensure_dir(root + "/" + dir);
      write_png(root + "/" + dir + "/lr.png", vi.lr);
      write_png(root + "/" + dir + "/hr.png", vi.hr);
      write_png(root + "/" + dir + "/normal.png", encode_normals(vi.normal_lr));
      write_png(root + "/" + dir + "/mask.png", vi.mask);
      json rec;
      rec["frame"] = static_cast<Index>(f);
      rec["view"] = static_cast<Index>(v);
      rec["lr"] = dir + "/lr.png";
      rec["hr"] = dir + "/hr.png";
      rec["normal"] = dir + "/normal.png";
      rec["mask"] = dir + "/mask.png";
      rec["camera"] = camera_json(ds.rig[v]);
      rec["pose"] = pose_json(ds.frames[f].pose);
      samples.push_back(std::move(rec));
    }
  }
  manifest["samples"] = std::move(samples);
  write_json_file(root + "/manifest.json", manifest);
}

inline LoadedDataset load_dataset(const std::string& root) {
  json manifest = read_json_file(root + "/manifest.json");
  if (manifest.at("schema_version").get<int>() != 1)
    throw IoError("unsupported dataset schema version");
  const json& header = manifest.at("header");

  LoadedDataset out;
  out.header.hr_size = header.at("hr_size").get<Index>();
  out.header.scale = header.at("scale").get<Index>();
  out.header.views = header.at("views").get<Index>();
  out.header.frames = header.at("frames").get<Index>();
  out.header.unit_mm = header.at("unit_mm").get<double>();
  out.header.bicubic_psnr = header.at("bicubic_psnr").get<double>();
  out.header.seed = header.at("seed").get<std::uint64_t>();
  out.header.train_views = header.at("splits").at("train_views").get<std::vector<Index>>();
  out.header.eval_views = header.at("splits").at("eval_views").get<std::vector<Index>>();

  out.hand = hand_from_json(read_json_file(root + "/" + header.at("template").get<std::string>()));
  out.scene.tpl = out.hand.tpl;
  out.scene.light = matrix_from_json(header.at("light"), 3);
  out.scene.upscale = out.header.scale;

  out.scene.frames.resize(static_cast<std::size_t>(out.header.frames));
  for (auto& fr : out.scene.frames)
    fr.views.resize(static_cast<std::size_t>(out.header.views));
  out.rig.resize(static_cast<std::size_t>(out.header.views));
  out.poses.resize(static_cast<std::size_t>(out.header.frames));

  for (const auto& rec : manifest.at("samples")) {
    Index f = rec.at("frame").get<Index>(), v = rec.at("view").get<Index>();
    if (f < 0 || f >= out.header.frames || v < 0 || v >= out.header.views)
      throw IoError("sample record out of range");
    scene::ViewData<double> vd;
    vd.cam = camera_from_json(rec.at("camera"));
    vd.lr = read_png(root + "/" + rec.at("lr").get<std::string>());
    vd.hr = read_png(root + "/" + rec.at("hr").get<std::string>());
    vd.normal_lr = decode_normals(read_png(root + "/" + rec.at("normal").get<std::string>()));
    vd.mask_hr = read_png(root + "/" + rec.at("mask").get<std::string>());
    out.rig[static_cast<std::size_t>(v)] = vd.cam;
    out.poses[static_cast<std::size_t>(f)] = pose_from_json(rec.at("pose"));
    out.scene.frames[static_cast<std::size_t>(f)].pose = out.poses[static_cast<std::size_t>(f)];
    out.scene.frames[static_cast<std::size_t>(f)].views[static_cast<std::size_t>(v)] =
        std::move(vd);
  }
  for (const auto& fr : out.scene.frames)
    for (const auto& vd : fr.views)
      if (vd.lr.data.size() == 0) throw IoError("dataset is missing samples for some grid cells");

  geom::MatX3<double> displaced = out.hand.tpl.vertices + out.hand.gt_disp;
  for (const auto& pose : out.poses) {
    auto A = geom::joint_transforms<double>(out.hand.tpl, pose);
    out.gt_verts.push_back(geom::lbs<double>(displaced, out.hand.tpl.weights, A));
  }
  return out;
}

// View-subset copy (train/eval splits).
inline scene::Scene<double> subscene(const scene::Scene<double>& sc,
                                     const std::vector<Index>& views) {
  if (views.empty()) throw ConfigError("view subset is empty");
  scene::Scene<double> out;
  out.tpl = sc.tpl;
  out.light = sc.light;
  out.upscale = sc.upscale;
  for (const auto& fr : sc.frames) {
    scene::FrameData<double> nf;
    nf.pose = fr.pose;
    for (Index v : views) {
      if (v < 0 || v >= static_cast<Index>(fr.views.size()))
        throw ConfigError("view index out of range");
      nf.views.push_back(fr.views[static_cast<std::size_t>(v)]);
    }
    out.frames.push_back(std::move(nf));
  }
  return out;
}

// ---- parameter checkpoints ----
// "SRCKPT1\n", u64 header length, json header (tensor names/shapes/aux plus
// caller metadata), then raw little-endian float64 blocks in header order.

inline void save_params(const std::string& path, const nn::Params<double>& params,
                        const json& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  json header;
  header["meta"] = meta;
  json tensors = json::array();
  for (const auto& [name, value] : params.values) {
    tensors.push_back({{"name", name},
                       {"shape", value.shape},
                       {"aux", params.aux.count(name) > 0}});
  }
  header["tensors"] = std::move(tensors);
  std::string hs = header.dump();
  f.write("SRCKPT1\n", 8);
  std::uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, value] : params.values)
    f.write(reinterpret_cast<const char*>(value.data.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(value.data.size())));
  if (!f) throw IoError("short write: " + path);
}

inline json load_params(const std::string& path, nn::Params<double>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "SRCKPT1\n") throw IoError("not a checkpoint: " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError("truncated checkpoint: " + path);
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw IoError("corrupt checkpoint header: " + path);

  params = nn::Params<double>{};
  for (const auto& rec : header.at("tensors")) {
    std::string name = rec.at("name").get<std::string>();
    Shape shape = rec.at("shape").get<Shape>();
    Tensor<double>& t =
        rec.at("aux").get<bool>() ? params.add_aux(name, shape) : params.add(name, shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.data.size())));
  }
  if (!f) throw IoError("truncated checkpoint: " + path);
  return header.at("meta");
}

// Overwrites the values of an initialized parameter set, name by name.
// Shapes must match; extra or missing names are an error.
inline void restore_params(nn::Params<double>& dst, const nn::Params<double>& src,
                           const std::string& what) {
  if (dst.values.size() != src.values.size())
    throw IoError("checkpoint parameter count mismatch for " + what);
  for (auto& [name, value] : dst.values) {
    auto it = src.values.find(name);
    if (it == src.values.end()) throw IoError("checkpoint is missing " + name + " for " + what);
    if (it->second.shape != value.shape)
      throw IoError("checkpoint shape mismatch at " + name + " for " + what);
    value.data = it->second.data;
  }
}

// ---- mesh export ----

inline void write_obj(const std::string& path, const geom::MatX3<double>& verts,
                      const geom::FaceMat& faces, const geom::MatX3<double>* colors = nullptr) {
  if (colors && colors->rows() != verts.rows()) throw ConfigError("color count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "# exported surface\n";
  for (Index v = 0; v < verts.rows(); ++v) {
    f << "v " << verts(v, 0) << " " << verts(v, 1) << " " << verts(v, 2);
    if (colors) f << " " << (*colors)(v, 0) << " " << (*colors)(v, 1) << " " << (*colors)(v, 2);
    f << "\n";
  }
  for (Index t = 0; t < faces.rows(); ++t)
    f << "f " << faces(t, 0) + 1 << " " << faces(t, 1) + 1 << " " << faces(t, 2) + 1 << "\n";
  if (!f) throw IoError("short write: " + path);
}

inline void write_ply(const std::string& path, const geom::MatX3<double>& verts,
                      const geom::FaceMat& faces, const geom::MatX3<double>* colors = nullptr) {
  if (colors && colors->rows() != verts.rows()) throw ConfigError("color count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << verts.rows() << "\n";
  f << "property double x\nproperty double y\nproperty double z\n";
  if (colors) f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "element face " << faces.rows() << "\n";
  f << "property list uchar int vertex_indices\nend_header\n";
  for (Index v = 0; v < verts.rows(); ++v) {
    f << verts(v, 0) << " " << verts(v, 1) << " " << verts(v, 2);
    if (colors)
      for (int c = 0; c < 3; ++c) {
        double x = std::clamp((*colors)(v, c), 0.0, 1.0);
        f << " " << static_cast<int>(x * 255.0 + 0.5);
      }
    f << "\n";
  }
  for (Index t = 0; t < faces.rows(); ++t)
    f << "3 " << faces(t, 0) << " " << faces(t, 1) << " " << faces(t, 2) << "\n";
  if (!f) throw IoError("short write: " + path);
}

}  // namespace srhand::io
