#include "srhand/config.h"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace srhand::cfg {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Cuts at the first '#' that is outside double quotes.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool is_integer_literal(const std::string& s) {
  std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i >= s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

TomlValue parse_value(const std::string& raw, int line) {
  TomlValue v;
  if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Kind::Bool;
    v.b = raw == "true";
    return v;
  }
  if (raw.size() >= 2 && raw.front() == '"') {
    if (raw.back() != '"' || raw.size() < 2) fail(line, "unterminated string");
    v.kind = TomlValue::Kind::Str;
    v.s = raw.substr(1, raw.size() - 2);
    if (v.s.find('"') != std::string::npos) fail(line, "string escapes are not supported");
    return v;
  }
  if (raw.front() == '[') {
    if (raw.back() != ']') fail(line, "unterminated list");
    v.kind = TomlValue::Kind::List;
    std::string body = trim(raw.substr(1, raw.size() - 2));
    if (body.empty()) return v;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      double d;
      if (!parse_number(item, d)) fail(line, "lists may only hold numbers");
      v.list.push_back(d);
    }
    if (!body.empty() && body.back() == ',') fail(line, "trailing comma in list");
    return v;
  }
  if (is_integer_literal(raw)) {
    v.kind = TomlValue::Kind::Int;
    v.i = std::stoll(raw);
    return v;
  }
  double d;
  if (parse_number(raw, d)) {
    v.kind = TomlValue::Kind::Float;
    v.d = d;
    return v;
  }
  fail(line, "cannot parse value '" + raw + "'");
}

// ---- typed access with section.key context in errors ----

[[noreturn]] void bad_type(const std::string& sec, const std::string& key,
                           const std::string& want) {
  throw ConfigError("[" + sec + "] " + key + " must be " + want);
}

struct Section {
  const std::string name;
  const std::map<std::string, TomlValue>* table;
  mutable std::vector<std::string> seen;

  const TomlValue* find(const std::string& key) const {
    if (!table) return nullptr;
    seen.push_back(key);
    auto it = table->find(key);
    return it == table->end() ? nullptr : &it->second;
  }

  void get(const std::string& key, Index& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind != TomlValue::Kind::Int) bad_type(name, key, "an integer");
    out = static_cast<Index>(v->i);
  }
  void get(const std::string& key, std::uint64_t& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind != TomlValue::Kind::Int || v->i < 0) bad_type(name, key, "a non-negative integer");
    out = static_cast<std::uint64_t>(v->i);
  }
  void get(const std::string& key, double& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind == TomlValue::Kind::Int)
      out = static_cast<double>(v->i);
    else if (v->kind == TomlValue::Kind::Float)
      out = v->d;
    else
      bad_type(name, key, "a number");
  }
  void get(const std::string& key, bool& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind != TomlValue::Kind::Bool) bad_type(name, key, "true or false");
    out = v->b;
  }
  void get(const std::string& key, std::string& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind != TomlValue::Kind::Str) bad_type(name, key, "a string");
    out = v->s;
  }
  void get(const std::string& key, std::vector<double>& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind != TomlValue::Kind::List) bad_type(name, key, "a list of numbers");
    out = v->list;
  }
  void get(const std::string& key, std::vector<Index>& out) const {
    const TomlValue* v = find(key);
    if (!v) return;
    if (v->kind != TomlValue::Kind::List) bad_type(name, key, "a list of integers");
    out.clear();
    for (double d : v->list) {
      Index i = static_cast<Index>(d);
      if (static_cast<double>(i) != d) bad_type(name, key, "a list of integers");
      out.push_back(i);
    }
  }

  // Every key in the file must have been consumed by a get() above.
  void finish() const {
    if (!table) return;
    for (const auto& [key, value] : *table) {
      (void)value;
      bool ok = false;
      for (const auto& s : seen) ok = ok || s == key;
      if (!ok)
        throw ConfigError("unknown key '" + key + "' in [" + (name.empty() ? "top level" : name) +
                          "]");
    }
  }
};

Section section(const TomlTable& t, std::vector<std::string>& known, const std::string& name) {
  known.push_back(name);
  auto it = t.find(name);
  return Section{name, it == t.end() ? nullptr : &it->second, {}};
}

std::string fmt(double d) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

void line_out(std::ostringstream& os, const std::string& sec, const std::string& key,
              const std::string& value) {
  os << sec << "." << key << " = " << value << "\n";
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

std::string fmt_list(const std::vector<Index>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
  TomlTable out;
  std::string sec;
  out[""];
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[' && s.find('=') == std::string::npos) {
      if (s.back() != ']') fail(line, "unterminated section header");
      sec = trim(s.substr(1, s.size() - 2));
      if (sec.empty()) fail(line, "empty section name");
      for (char c : sec)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
          fail(line, "bad section name '" + sec + "'");
      if (out.count(sec)) fail(line, "duplicate section [" + sec + "]");
      out[sec];
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key.empty()) fail(line, "empty key");
    for (char c : key)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
        fail(line, "bad key name '" + key + "'");
    if (val.empty()) fail(line, "missing value for '" + key + "'");
    if (out[sec].count(key)) fail(line, "duplicate key '" + key + "'");
    out[sec][key] = parse_value(val, line);
  }
  return out;
}

void RunConfig::apply(const TomlTable& table) {
  std::vector<std::string> known;

  Section top = section(table, known, "");
  top.get("seed", seed);
  top.finish();

  Section d = section(table, known, "data");
  d.get("views", data.views);
  d.get("frames", data.frames);
  d.get("hr", data.hr);
  d.get("scale", data.scale);
  d.get("subdiv", data.subdiv);
  d.get("holdout", data.holdout);
  d.get("radius", data.radius);
  d.finish();

  Section g = section(table, known, "giif");
  g.get("c_img", giif.c_img);
  g.get("c_n", giif.c_n);
  g.get("tile", giif.tile);
  g.get("use_normal", giif.use_normal);
  g.get("local_ensemble", giif.local_ensemble);
  g.get("feat_unfold", giif.feat_unfold);
  g.get("cell_decode", giif.cell_decode);
  g.get("hidden", giif.hidden);
  g.get("epochs", giif.epochs);
  g.get("crop", giif.crop);
  g.get("disc_feat", giif.disc_feat);
  g.get("lr", giif.lr);
  g.get("disc_lr", giif.disc_lr);
  g.get("w_adv", giif.w_adv);
  g.finish();

  Section a = section(table, known, "avatar");
  a.get("code_dim", avatar.code_dim);
  a.get("hidden", avatar.hidden);
  a.get("d_max", avatar.d_max);
  a.get("color_conditioned", avatar.color_conditioned);
  a.finish();

  Section l = section(table, known, "losses");
  l.get("w_rgb", losses.w_rgb);
  l.get("lambda_perc", losses.lambda_perc);
  l.get("w_lap_albedo", losses.w_lap_albedo);
  l.get("w_lap_disp", losses.w_lap_disp);
  l.get("w_edge", losses.w_edge);
  l.get("lambda_mean_tex", losses.lambda_mean_tex);
  l.get("part_weights", losses.part_weights);
  l.finish();

  Section f = section(table, known, "finetune");
  f.get("epochs", finetune.epochs);
  f.get("fine_steps", finetune.fine_steps);
  f.get("fine_every", finetune.fine_every);
  f.get("fine_start", finetune.fine_start);
  f.get("lr_avatar", finetune.lr_avatar);
  f.get("lr_decoder", finetune.lr_decoder);
  f.get("u_max", finetune.u_max);
  f.get("u_floor", finetune.u_floor);
  f.get("divergence_factor", finetune.divergence_factor);
  f.get("w_consistency", finetune.w_consistency);
  f.get("w_wavelet", finetune.w_wavelet);
  f.get("w_realism", finetune.w_realism);
  f.finish();

  Section e = section(table, known, "eval");
  e.get("split", eval.split);
  e.finish();

  for (const auto& [name, keys] : table) {
    (void)keys;
    bool ok = false;
    for (const auto& k : known) ok = ok || k == name;
    if (!ok) throw ConfigError("unknown section [" + name + "]");
  }
  validate();
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(data.views >= 1, "[data] views must be >= 1");
  need(data.frames >= 1, "[data] frames must be >= 1");
  need(data.scale >= 1, "[data] scale must be >= 1");
  need(data.hr >= 8, "[data] hr must be >= 8");
  need(data.hr % data.scale == 0, "[data] hr must be divisible by scale");
  need(data.subdiv >= 0, "[data] subdiv must be >= 0");
  need(data.holdout == -1 || (data.holdout >= 0 && data.holdout < data.views),
       "[data] holdout must be -1 or in [0, views)");
  need(data.radius > 0, "[data] radius must be positive");
  need(giif.c_img >= 1 && giif.c_n >= 1, "[giif] channel counts must be >= 1");
  need(giif.tile >= 1, "[giif] tile must be >= 1");
  need(giif.epochs >= 1, "[giif] epochs must be >= 1");
  need(giif.crop >= 4 && giif.crop % 4 == 0, "[giif] crop must be a positive multiple of 4");
  need(giif.disc_feat >= 1, "[giif] disc_feat must be >= 1");
  need(giif.lr > 0 && giif.disc_lr > 0, "[giif] learning rates must be positive");
  need(giif.w_adv >= 0, "[giif] w_adv must be >= 0");
  for (Index h : giif.hidden) need(h >= 1, "[giif] hidden sizes must be >= 1");
  need(avatar.code_dim >= 1, "[avatar] code_dim must be >= 1");
  for (Index h : avatar.hidden) need(h >= 1, "[avatar] hidden sizes must be >= 1");
  need(avatar.d_max > 0, "[avatar] d_max must be positive");
  for (double w : losses.part_weights) need(w >= 0, "[losses] part_weights must be >= 0");
  need(finetune.lr_avatar > 0 && finetune.lr_decoder > 0,
       "[finetune] learning rates must be positive");
  need(finetune.u_max >= finetune.u_floor && finetune.u_floor >= 0,
       "[finetune] needs 0 <= u_floor <= u_max");
  need(finetune.divergence_factor > 1, "[finetune] divergence_factor must be > 1");
  need(eval.split == "eval" || eval.split == "train" || eval.split == "all",
       "[eval] split must be eval, train, or all");
  need(finetune.epochs >= 0 && finetune.fine_steps >= 0,
       "[finetune] schedule lengths must be >= 0");
  need(finetune.fine_every >= 1, "[finetune] fine_every must be >= 1");
  Index start = finetune.fine_start >= 0 ? finetune.fine_start : finetune.epochs / 2;
  need(start <= finetune.epochs, "[finetune] fine_start lies beyond the last epoch");
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  line_out(os, "avatar", "code_dim", std::to_string(avatar.code_dim));
  line_out(os, "avatar", "color_conditioned", avatar.color_conditioned ? "true" : "false");
  line_out(os, "avatar", "d_max", fmt(avatar.d_max));
  line_out(os, "avatar", "hidden", fmt_list(avatar.hidden));
  line_out(os, "data", "frames", std::to_string(data.frames));
  line_out(os, "data", "holdout", std::to_string(data.holdout));
  line_out(os, "data", "hr", std::to_string(data.hr));
  line_out(os, "data", "radius", fmt(data.radius));
  line_out(os, "data", "scale", std::to_string(data.scale));
  line_out(os, "data", "subdiv", std::to_string(data.subdiv));
  line_out(os, "data", "views", std::to_string(data.views));
  line_out(os, "eval", "split", eval.split);
  line_out(os, "finetune", "divergence_factor", fmt(finetune.divergence_factor));
  line_out(os, "finetune", "epochs", std::to_string(finetune.epochs));
  line_out(os, "finetune", "fine_every", std::to_string(finetune.fine_every));
  line_out(os, "finetune", "fine_start", std::to_string(finetune.fine_start));
  line_out(os, "finetune", "fine_steps", std::to_string(finetune.fine_steps));
  line_out(os, "finetune", "lr_avatar", fmt(finetune.lr_avatar));
  line_out(os, "finetune", "lr_decoder", fmt(finetune.lr_decoder));
  line_out(os, "finetune", "u_floor", fmt(finetune.u_floor));
  line_out(os, "finetune", "u_max", fmt(finetune.u_max));
  line_out(os, "finetune", "w_consistency", fmt(finetune.w_consistency));
  line_out(os, "finetune", "w_realism", fmt(finetune.w_realism));
  line_out(os, "finetune", "w_wavelet", fmt(finetune.w_wavelet));
  line_out(os, "giif", "c_img", std::to_string(giif.c_img));
  line_out(os, "giif", "c_n", std::to_string(giif.c_n));
  line_out(os, "giif", "cell_decode", giif.cell_decode ? "true" : "false");
  line_out(os, "giif", "crop", std::to_string(giif.crop));
  line_out(os, "giif", "disc_feat", std::to_string(giif.disc_feat));
  line_out(os, "giif", "disc_lr", fmt(giif.disc_lr));
  line_out(os, "giif", "epochs", std::to_string(giif.epochs));
  line_out(os, "giif", "feat_unfold", giif.feat_unfold ? "true" : "false");
  line_out(os, "giif", "hidden", fmt_list(giif.hidden));
  line_out(os, "giif", "local_ensemble", giif.local_ensemble ? "true" : "false");
  line_out(os, "giif", "lr", fmt(giif.lr));
  line_out(os, "giif", "tile", std::to_string(giif.tile));
  line_out(os, "giif", "use_normal", giif.use_normal ? "true" : "false");
  line_out(os, "giif", "w_adv", fmt(giif.w_adv));
  line_out(os, "losses", "lambda_mean_tex", fmt(losses.lambda_mean_tex));
  line_out(os, "losses", "lambda_perc", fmt(losses.lambda_perc));
  line_out(os, "losses", "part_weights", fmt_list(losses.part_weights));
  line_out(os, "losses", "w_edge", fmt(losses.w_edge));
  line_out(os, "losses", "w_lap_albedo", fmt(losses.w_lap_albedo));
  line_out(os, "losses", "w_lap_disp", fmt(losses.w_lap_disp));
  line_out(os, "losses", "w_rgb", fmt(losses.w_rgb));
  line_out(os, "top", "seed", std::to_string(seed));
  return os.str();
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig rc;
  rc.apply(parse_toml(text));
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace srhand::cfg
