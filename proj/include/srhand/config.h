#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "srhand/common.h"
#include "srhand/tensor.h"

namespace srhand::cfg {

struct TomlValue {
  enum class Kind { Bool, Int, Float, Str, List };
  Kind kind = Kind::Int;
  bool b = false;
  long long i = 0;
  double d = 0;
  std::string s;
  std::vector<double> list;
};

// section -> key -> value; top-level keys live under "".
using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

// Minimal TOML reader: [section] headers, key = value, # comments, values of
// kind bool / integer / float / "string" / [numbers]. Errors carry line numbers.
TomlTable parse_toml(const std::string& text);

// Every tunable in one place; file values overlay these defaults and unknown
// sections or keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;

  struct Data {
    Index views = 8, frames = 8, hr = 256, scale = 4, subdiv = 1;
    Index holdout = -1;  // held-out view count; -1 = min(2, views - 1)
    double radius = 0.4;
  } data;

  Index resolved_holdout() const {
    return data.holdout >= 0 ? data.holdout : std::max<Index>(Index(0), std::min<Index>(Index(2), data.views - 1));
  }

  struct Giif {
    Index c_img = 64, c_n = 32, tile = 4096;
    bool use_normal = true, local_ensemble = true, feat_unfold = true, cell_decode = true;
    std::vector<Index> hidden = {256, 256, 256, 256};
    Index epochs = 3, crop = 32, disc_feat = 16;
    double lr = 1e-4, disc_lr = 1e-4, w_adv = 0.01;
  } giif;

  struct Avatar {
    Index code_dim = 16;
    std::vector<Index> hidden = {64, 64};
    double d_max = 0.005;
    bool color_conditioned = true;
  } avatar;

  struct Losses {
    double w_rgb = 1, lambda_perc = 0.1, w_lap_albedo = 1, w_lap_disp = 1, w_edge = 1,
           lambda_mean_tex = 0.1;
    std::vector<double> part_weights;  // per-joint, empty = all 1
  } losses;

  struct Finetune {
    Index epochs = 10, fine_steps = 3, fine_every = 2, fine_start = -1;
    double lr_avatar = 1e-3, lr_decoder = 1e-5, u_max = 0.5, u_floor = 0,
           divergence_factor = 10;
    double w_consistency = 1, w_wavelet = 1, w_realism = 1;
  } finetune;

  struct Eval {
    std::string split = "eval";  // eval | train | all
  } eval;

  void apply(const TomlTable& table);
  void validate() const;

  // Sorted section.key = value dump of the fully resolved config.
  std::string canonical() const;
  // FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
};

}  // namespace srhand::cfg
