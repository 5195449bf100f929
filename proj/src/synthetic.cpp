#include "gsavatar/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace gsavatar {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

std::vector<double> chain_weights(double y, int bones, double y0, double length, double radius) {
  // a[k] is how far the point has moved past interior joint k
  std::vector<double> a(static_cast<std::size_t>(bones) + 1, 0.0);
  a[0] = 1.0;
  for (int k = 1; k < bones; ++k) {
    const double yk = y0 + k * length;
    a[static_cast<std::size_t>(k)] = smoothstep((y - (yk - radius)) / (2.0 * radius));
  }
  std::vector<double> w(static_cast<std::size_t>(bones));
  for (int b = 0; b < bones; ++b) w[static_cast<std::size_t>(b)] = a[static_cast<std::size_t>(b)] - a[static_cast<std::size_t>(b) + 1];
  return w;
}

std::string frame_name(int i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i << ".png";
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace

SkinnedTemplate make_capsule_chain(int bones, double bone_length, double radius, int rings_per_bone, int segments) {
  if (bones < 1) throw TemplateError("capsule chain needs at least one bone");
  if (!(radius > 0.0) || bone_length < 2.0 * radius) {
    throw TemplateError("capsule chain needs 0 < radius <= bone_length / 2");
  }
  const double total = bones * bone_length;
  const double y0 = -0.5 * total;
  const double y1 = 0.5 * total;

  // profile rings (radius, height), pole to pole
  std::vector<std::pair<double, double>> profile;
  const int cap_rings = 6;
  for (int k = 0; k <= cap_rings; ++k) {
    const double phi = -0.5 * kPi + 0.5 * kPi * k / cap_rings;
    profile.emplace_back(radius * std::cos(phi), y0 + radius * std::sin(phi));
  }
  const int body = rings_per_bone * bones;
  for (int k = 1; k < body; ++k) profile.emplace_back(radius, y0 + total * k / body);
  for (int k = 0; k <= cap_rings; ++k) {
    const double phi = 0.5 * kPi * k / cap_rings;
    profile.emplace_back(radius * std::cos(phi), y1 + radius * std::sin(phi));
  }

  std::vector<Vec3> verts;
  std::vector<std::array<std::uint32_t, 3>> tris;
  std::vector<std::uint32_t> ring_start;
  for (const auto& [r, y] : profile) {
    ring_start.push_back(static_cast<std::uint32_t>(verts.size()));
    if (r < 1e-12) {
      verts.emplace_back(0.0, y, 0.0);
      continue;
    }
    for (int s = 0; s < segments; ++s) {
      const double th = 2.0 * kPi * s / segments;
      verts.emplace_back(r * std::cos(th), y, -r * std::sin(th));
    }
  }
  auto ring_size = [&](std::size_t k) { return profile[k].first < 1e-12 ? 1u : static_cast<unsigned>(segments); };
  for (std::size_t k = 0; k + 1 < profile.size(); ++k) {
    const std::uint32_t a = ring_start[k], b = ring_start[k + 1];
    const unsigned na = ring_size(k), nb = ring_size(k + 1);
    for (unsigned s = 0; s < static_cast<unsigned>(segments); ++s) {
      const unsigned t = (s + 1) % static_cast<unsigned>(segments);
      if (na == 1) {
        tris.push_back({a, b + s, b + t});
      } else if (nb == 1) {
        tris.push_back({a + s, b, a + t});
      } else {
        tris.push_back({a + s, b + s, b + t});
        tris.push_back({a + s, b + t, a + t});
      }
    }
  }

  std::vector<std::vector<double>> weights;
  weights.reserve(verts.size());
  for (const Vec3& v : verts) weights.push_back(chain_weights(v.y(), bones, y0, bone_length, radius));

  std::vector<int> parents;
  std::vector<Vec3> joints;
  std::vector<std::string> names;
  for (int b = 0; b < bones; ++b) {
    parents.push_back(b - 1);
    joints.emplace_back(0.0, y0 + b * bone_length, 0.0);
    names.push_back("bone" + std::to_string(b));
  }
  return SkinnedTemplate(names, parents, joints, verts, tris, weights);
}

PoseParams bend_pose(std::size_t bones, double degrees) {
  PoseParams p = PoseParams::identity(bones);
  const double rad = degrees * kPi / 180.0;
  for (std::size_t b = 1; b < bones; ++b) p.local_rotations[b] = Quat::from_axis_angle(Vec3(0.0, 0.0, rad));
  return p;
}

Vec3 bone_base_color(std::size_t bone) {
  static const Vec3 palette[] = {{0.85, 0.35, 0.25}, {0.25, 0.55, 0.85}, {0.30, 0.80, 0.35}, {0.85, 0.75, 0.30}};
  return palette[bone % 4];
}

GroundTruthAvatar make_ground_truth(const SkinnedTemplate& tmpl, const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const auto n = static_cast<std::size_t>(cfg.gt_gaussians);
  const auto samples = tmpl.sample_surface(n, rng);
  GroundTruthAvatar gt;
  gt.opacity = cfg.gt_opacity;
  gt.sigma = 0.7 * std::sqrt(tmpl.surface_area() / static_cast<double>(std::max<std::size_t>(n, 1)));
  const double y0 = tmpl.bbox().lo.y(), height = tmpl.bbox().extent().y();
  for (const auto& s : samples) {
    gt.positions.push_back(s.position);
    gt.weights.push_back(s.weights);
    Vec3 base = Vec3::Zero();
    for (std::size_t b = 0; b < s.weights.size(); ++b) base += s.weights[b] * bone_base_color(b);
    const double u = (s.position.y() - y0) / height;
    const double stripe = 0.5 * (1.0 + std::sin(2.0 * kPi * cfg.stripe_frequency * u));
    gt.colors.push_back(base * (0.6 + 0.4 * stripe));
  }
  return gt;
}

SplatScene pose_ground_truth(const GroundTruthAvatar& gt, const BoneTransforms& bones) {
  SplatScene scene;
  scene.resize(gt.positions.size());
  const Mat3 iso = Mat3::Identity() * gt.sigma * gt.sigma;
  for (std::size_t i = 0; i < gt.positions.size(); ++i) {
    const Mat4 t = lbs_transform(gt.weights[i], bones);
    const Mat3 l = t.topLeftCorner<3, 3>();
    scene.means[i] = transform_point(t, gt.positions[i]);
    scene.covariances[i] = l * iso * l.transpose();
    scene.opacities[i] = gt.opacity;
    scene.colors[i] = gt.colors[i];
  }
  return scene;
}

OracleView render_oracle(const GroundTruthAvatar& gt, const SkinnedTemplate& tmpl, const PoseParams& pose,
                         const Camera& cam, const RenderOptions& opt) {
  const SplatScene scene = pose_ground_truth(gt, forward_kinematics(tmpl, pose));
  const Framebuffer fb = render_reference(scene, cam, opt);
  OracleView v{Image(fb.width, fb.height, 3), Image(fb.width, fb.height, 1)};
  v.rgb.data = fb.rgb;
  for (std::size_t p = 0; p < fb.pixels(); ++p) v.mask.data[p] = fb.opacity[p] > 0.5 ? 1.0 : 0.0;
  return v;
}

Camera orbit_camera(const SynthConfig& cfg, double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * kPi / 180.0, el = elevation_deg * kPi / 180.0;
  const Vec3 eye = cfg.camera_distance * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
  return Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), cfg.width, cfg.height, cfg.fov_deg);
}

std::vector<const DatasetFrame*> Dataset::split(bool train) const {
  std::vector<const DatasetFrame*> out;
  for (const auto& f : frames) {
    if (f.train == train) out.push_back(&f);
  }
  return out;
}

void write_synthetic_dataset(const SynthConfig& cfg, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "frames", ec);
  fs::create_directories(root / "masks", ec);
  if (ec || !fs::is_directory(root / "masks")) throw std::runtime_error("cannot create dataset directory " + dir);

  const SkinnedTemplate tmpl = make_capsule_chain(cfg.bones, cfg.bone_length, cfg.radius);
  const GroundTruthAvatar gt = make_ground_truth(tmpl, cfg);
  tmpl.save((root / "template.json").string());

  std::mt19937_64 rng(cfg.seed + 1);
  std::uniform_real_distribution<double> bend(0.0, cfg.bend_max_deg);
  std::vector<Camera> cams;
  json frames = json::array();
  int index = 0;
  auto emit = [&](bool train, double bend_deg, double azimuth) {
    const PoseParams pose = bend_pose(tmpl.bone_count(), bend_deg);
    const Camera cam = orbit_camera(cfg, azimuth);
    const OracleView view = render_oracle(gt, tmpl, pose, cam);
    const std::string name = frame_name(index);
    write_png((root / "frames" / name).string(), view.rgb);
    write_png((root / "masks" / name).string(), view.mask);
    frames.push_back({{"index", index},
                      {"split", train ? "train" : "novel"},
                      {"camera", cams.size()},
                      {"bend_deg", bend_deg},
                      {"pose", pose.to_json()},
                      {"image", "frames/" + name},
                      {"mask", "masks/" + name}});
    cams.push_back(cam);
    ++index;
  };
  for (int f = 0; f < cfg.train_frames; ++f) {
    double b = bend(rng);
    while (std::abs(b - cfg.novel_bend_deg) < 4.0) b = bend(rng);
    emit(true, b, std::fmod(137.50776405 * f, 360.0));
  }
  for (int f = 0; f < cfg.novel_frames; ++f) {
    emit(false, cfg.novel_bend_deg, 22.5 + 360.0 * f / std::max(cfg.novel_frames, 1));
  }
  save_cameras((root / "cameras.json").string(), cams);
  write_text(root / "poses.json", json{{"bones", tmpl.bone_count()}, {"frames", frames}}.dump(1) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  Dataset ds;
  ds.root = dir;
  ds.tmpl = SkinnedTemplate::load((root / "template.json").string());
  ds.cameras = load_cameras((root / "cameras.json").string());
  const json poses = read_json(root / "poses.json");
  for (const auto& j : poses.at("frames")) {
    DatasetFrame f;
    f.index = j.at("index").get<int>();
    f.train = j.at("split").get<std::string>() == "train";
    f.camera = j.at("camera").get<int>();
    f.bend_deg = j.value("bend_deg", 0.0);
    f.pose = PoseParams::from_json(j.at("pose"));
    if (f.pose.local_rotations.size() != ds.tmpl.bone_count()) {
      throw std::runtime_error("poses.json: frame " + std::to_string(f.index) + " has the wrong joint count");
    }
    if (f.camera < 0 || static_cast<std::size_t>(f.camera) >= ds.cameras.size()) {
      throw std::runtime_error("poses.json: frame " + std::to_string(f.index) + " references a missing camera");
    }
    f.image_path = j.at("image").get<std::string>();
    f.mask_path = j.at("mask").get<std::string>();
    f.rgb = read_png((root / f.image_path).string());
    f.mask = read_png((root / f.mask_path).string());
    if (f.rgb.channels == 1) throw std::runtime_error(f.image_path + ": expected a color image");
    const Camera& cam = ds.cameras[static_cast<std::size_t>(f.camera)];
    if (f.rgb.width != cam.width || f.rgb.height != cam.height || f.mask.width != cam.width ||
        f.mask.height != cam.height) {
      throw std::runtime_error("frame " + std::to_string(f.index) + ": image size does not match its camera");
    }
    if (f.mask.channels == 3) {
      Image m(f.mask.width, f.mask.height, 1);
      for (std::size_t p = 0; p < m.pixels(); ++p) m.data[p] = f.mask.data[3 * p];
      f.mask = std::move(m);
    }
    for (double& v : f.mask.data) v = v > 0.5 ? 1.0 : 0.0;
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

}  // namespace gsavatar
