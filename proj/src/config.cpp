#include "gsavatar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <variant>

namespace gsavatar {

namespace {

using Slot = std::variant<double*, int*, long*, bool*, std::string*, std::uint64_t*>;

struct Field {
  std::string section;
  std::string key;
  Slot slot;
};

std::vector<Field> fields(Config& c) {
  return {
      {"synth", "bones", &c.synth.bones},
      {"synth", "bone_length", &c.synth.bone_length},
      {"synth", "radius", &c.synth.radius},
      {"synth", "width", &c.synth.width},
      {"synth", "height", &c.synth.height},
      {"synth", "train_frames", &c.synth.train_frames},
      {"synth", "novel_frames", &c.synth.novel_frames},
      {"synth", "bend_max_deg", &c.synth.bend_max_deg},
      {"synth", "novel_bend_deg", &c.synth.novel_bend_deg},
      {"synth", "gt_gaussians", &c.synth.gt_gaussians},
      {"synth", "gt_opacity", &c.synth.gt_opacity},
      {"synth", "camera_distance", &c.synth.camera_distance},
      {"synth", "fov_deg", &c.synth.fov_deg},
      {"synth", "stripe_frequency", &c.synth.stripe_frequency},
      {"synth", "seed", &c.synth.seed},

      {"model", "n_init", &c.model.n_init},
      {"model", "knn", &c.model.knn},
      {"model", "color_width", &c.model.color_width},

      {"skinning", "hidden_layers", &c.model.skinning.hidden_layers},
      {"skinning", "hidden_width", &c.model.skinning.hidden_width},
      {"skinning", "output_init_scale", &c.model.skinning.output_init_scale},

      {"nonrigid", "depth", &c.model.nonrigid.depth},
      {"nonrigid", "width", &c.model.nonrigid.width},
      {"nonrigid", "pose_dim", &c.model.nonrigid.pose_dim},

      {"hashgrid", "levels", &c.model.nonrigid.hashgrid.levels},
      {"hashgrid", "features", &c.model.nonrigid.hashgrid.features},
      {"hashgrid", "log2_table_size", &c.model.nonrigid.hashgrid.log2_table_size},
      {"hashgrid", "base_resolution", &c.model.nonrigid.hashgrid.base_resolution},
      {"hashgrid", "finest_resolution", &c.model.nonrigid.hashgrid.finest_resolution},
      {"hashgrid", "init_range", &c.model.nonrigid.hashgrid.init_range},

      {"loss", "l1", &c.loss.l1},
      {"loss", "perc", &c.loss.perc},
      {"loss", "mask", &c.loss.mask},
      {"loss", "skin", &c.loss.skin},
      {"loss", "skin_late", &c.loss.skin_late},
      {"loss", "skin_switch", &c.loss.skin_switch},
      {"loss", "isopos", &c.loss.isopos},
      {"loss", "isocov", &c.loss.isocov},
      {"loss", "skin_samples", &c.loss.skin_samples},
      {"loss", "perceptual", &c.loss.perceptual},

      {"schedule", "iterations", &c.schedule.iterations},
      {"schedule", "gaussian_gate", &c.schedule.gaussian_gate},
      {"schedule", "nonrigid_gate", &c.schedule.nonrigid_gate},
      {"schedule", "pose_gate", &c.schedule.pose_gate},
      {"schedule", "eval_interval", &c.schedule.eval_interval},

      {"lr", "skinning", &c.lr.skinning},
      {"lr", "networks", &c.lr.networks},
      {"lr", "network_decay", &c.lr.network_decay},
      {"lr", "position", &c.lr.position},
      {"lr", "position_final", &c.lr.position_final},
      {"lr", "feature", &c.lr.feature},
      {"lr", "opacity", &c.lr.opacity},
      {"lr", "scale", &c.lr.scale},
      {"lr", "rotation", &c.lr.rotation},
      {"lr", "latent_weight_decay", &c.lr.latent_weight_decay},
      {"lr", "beta1", &c.lr.beta1},
      {"lr", "beta2", &c.lr.beta2},
      {"lr", "eps", &c.lr.eps},
      {"lr", "optimize_pose_scale", &c.lr.optimize_pose_scale},

      {"densify", "interval", &c.densify.interval},
      {"densify", "until_fraction", &c.densify.until_fraction},
      {"densify", "grad_threshold", &c.densify.params.grad_threshold},
      {"densify", "min_opacity", &c.densify.params.min_opacity},
      {"densify", "percent_dense", &c.densify.params.percent_dense},
      {"densify", "scene_extent", &c.densify.params.scene_extent},
      {"densify", "max_gaussians", &c.densify.params.max_gaussians},
      {"densify", "split_scale_divisor", &c.densify.params.split_scale_divisor},
      {"densify", "split_children", &c.densify.params.split_children},

      {"augment", "pose_noise", &c.augment.pose_noise},
      {"augment", "pose_noise_std", &c.augment.pose_noise_std},
      {"augment", "pose_noise_prob", &c.augment.pose_noise_prob},
      {"augment", "viewdir_max_deg", &c.augment.viewdir_max_deg},

      {"render", "tile_size", &c.render.tile_size},
      {"render", "cov_floor", &c.render.cov_floor},
      {"render", "cutoff_sigma", &c.render.cutoff_sigma},
      {"render", "min_transmittance", &c.render.min_transmittance},

      {"train", "seed", &c.train.seed},
      {"train", "log_interval", &c.train.log_interval},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// strips a trailing comment that is not inside a quoted string
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

template <class T>
T parse_integer(const std::string& v, const std::string& key) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("invalid integer for " + key + ": '" + v + "'", key);
  return out;
}

void assign(const Slot& slot, const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          char* end = nullptr;
          const double d = std::strtod(v.c_str(), &end);
          if (v.empty() || *end != '\0') throw ConfigError("invalid number for " + key + ": '" + v + "'", key);
          *p = d;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v == "true") *p = true;
          else if (v == "false") *p = false;
          else throw ConfigError("invalid boolean for " + key + ": '" + v + "'", key);
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
            throw ConfigError("expected quoted string for " + key + ": '" + v + "'", key);
          }
          *p = v.substr(1, v.size() - 2);
        } else {
          *p = parse_integer<T>(v, key);
        }
      },
      slot);
}

std::string format(const Slot& slot) {
  std::ostringstream os;
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          os << std::setprecision(std::numeric_limits<double>::max_digits10) << *p;
        } else if constexpr (std::is_same_v<T, bool>) {
          os << (*p ? "true" : "false");
        } else if constexpr (std::is_same_v<T, std::string>) {
          os << '"' << *p << '"';
        } else {
          os << *p;
        }
      },
      slot);
  return os.str();
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  auto table = fields(c);
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      bool known = false;
      for (const auto& f : table) known = known || f.section == section;
      if (!known) throw ConfigError(where + ": unknown section [" + section + "]", section);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string dotted = section.empty() ? key : section + "." + key;
    const Field* hit = nullptr;
    for (const auto& f : table) {
      if (f.section == section && f.key == key) hit = &f;
    }
    if (!hit) throw ConfigError(where + ": unknown key '" + dotted + "'", dotted);
    try {
      assign(hit->slot, s.substr(eq + 1), dotted);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what(), dotted);
    }
  }
  c.validate();
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void Config::set(const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  const std::string section = dot == std::string::npos ? "" : dotted_key.substr(0, dot);
  const std::string key = dot == std::string::npos ? dotted_key : dotted_key.substr(dot + 1);
  for (const auto& f : fields(*this)) {
    if (f.section == section && f.key == key) {
      // command-line overrides may leave strings unquoted
      const std::string v = trim(value);
      const bool bare = std::holds_alternative<std::string*>(f.slot) && (v.empty() || v.front() != '"');
      assign(f.slot, bare ? '"' + v + '"' : value, dotted_key);
      return;
    }
  }
  throw ConfigError("unknown key '" + dotted_key + "'", dotted_key);
}

std::string Config::dump() const {
  Config copy = *this;
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) os << "\n";
      section = f.section;
      os << "[" << section << "]\n";
    }
    os << f.key << " = " << format(f.slot) << "\n";
  }
  return os.str();
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) throw ConfigError(key + ": " + msg, key);
  };
  require(synth.bones >= 2 && synth.bones <= 4, "synth.bones", "must be in 2..4");
  require(synth.width > 0 && synth.height > 0, "synth.width", "image size must be positive");
  require(model.n_init > 0, "model.n_init", "must be positive");
  require(model.knn > 0, "model.knn", "must be positive");
  require(model.nonrigid.depth >= 1, "nonrigid.depth", "must be >= 1");
  require(model.nonrigid.hashgrid.levels >= 1, "hashgrid.levels", "must be >= 1");
  require(schedule.iterations >= 0, "schedule.iterations", "must be >= 0");
  require(schedule.gaussian_gate <= schedule.nonrigid_gate && schedule.nonrigid_gate <= schedule.pose_gate,
          "schedule.gaussian_gate", "gates must be ordered gaussian <= nonrigid <= pose");
  require(loss.l1 >= 0 && loss.perc >= 0 && loss.mask >= 0 && loss.skin >= 0 && loss.skin_late >= 0 &&
              loss.isopos >= 0 && loss.isocov >= 0,
          "loss", "weights must be non-negative");
  require(densify.interval > 0, "densify.interval", "must be positive");
  require(render.tile_size > 0, "render.tile_size", "must be positive");
  require(augment.pose_noise_prob >= 0 && augment.pose_noise_prob <= 1, "augment.pose_noise_prob", "must be in [0,1]");
}

}  // namespace gsavatar
