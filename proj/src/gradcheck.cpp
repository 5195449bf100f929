#include "gsavatar/gradcheck.hpp"

#include "gsavatar/model.hpp"
#include "gsavatar/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

namespace gsavatar {

namespace {

struct MicroScene {
  AvatarModel model;
  Camera camera;
  Image gt_rgb;
  Image gt_mask;
  std::vector<SurfaceSample> skin_samples;
  LossConfig weights;
  RenderOptions render;
  std::unique_ptr<PerceptualLoss> perceptual;
};

void randomize(Tensor& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  for (double& v : t.value) v = n(rng);
}

MicroScene make_micro_scene(std::uint64_t seed) {
  MicroScene m;
  std::mt19937_64 rng(seed);
  SkinnedTemplate tmpl = make_capsule_chain(2, 0.5, 0.16, 4, 8);
  ModelConfig cfg;
  cfg.n_init = 5;
  cfg.knn = 3;
  // coarse grid: finite-difference steps must not straddle trilinear cell faces
  cfg.nonrigid.hashgrid.levels = 6;
  cfg.nonrigid.hashgrid.finest_resolution = 96;
  cfg.nonrigid.hashgrid.log2_table_size = 14;
  PoseParams pose = bend_pose(2, 30.0);
  pose.translation = Vec3(0.02, -0.03, 0.01);
  pose.global_rotation = Quat::from_axis_angle(Vec3(0.1, -0.2, 0.05));
  m.model = AvatarModel(tmpl, cfg, {pose}, seed);

  GaussianSet& g = m.model.gaussians;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) g.log_scales(i, a) += 0.2 * n01(rng);
    const Quat q = Quat::from_axis_angle(Vec3(n01(rng), n01(rng), n01(rng)));
    const double len = 1.0 + 0.2 * std::abs(n01(rng));
    g.rotations(i, 0) = len * q.w;
    g.rotations(i, 1) = len * q.x;
    g.rotations(i, 2) = len * q.y;
    g.rotations(i, 3) = len * q.z;
    g.opacity_logits(i, 0) = n01(rng);
  }
  randomize(g.features, rng, 0.5);
  // non-trivial outputs everywhere so every path carries gradient
  randomize(m.model.nonrigid.mlp().output_weight(), rng, 0.02);
  randomize(m.model.nonrigid.mlp().output_bias(), rng, 0.02);
  randomize(m.model.skinning.mlp().output_weight(), rng, 0.3);
  randomize(m.model.latents.codes(), rng, 0.3);

  m.camera = orbit_camera(SynthConfig{.width = 8, .height = 8}, 30.0);
  m.gt_rgb = Image(8, 8, 3);
  m.gt_mask = Image(8, 8, 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (double& v : m.gt_rgb.data) v = u01(rng);
  for (int y = 2; y < 7; ++y) {
    for (int x = 3; x < 6; ++x) m.gt_mask.at(x, y, 0) = 1.0;
  }
  m.skin_samples = tmpl.sample_surface(16, rng);
  m.perceptual = make_perceptual_loss("pyramid_l1");
  return m;
}

FrameOptions micro_options(std::mt19937_64* rng, bool flip) {
  FrameOptions o;
  o.pose_noise_std = 0.1;
  o.pose_noise_prob = 1.0;
  o.viewdir_max_deg = 30.0;
  o.rng = rng;
  o.flip_delta_scale_grad = flip;
  return o;
}

FrameRequest micro_request(const MicroScene& m) {
  FrameRequest r;
  r.camera = m.camera;
  r.pose_row = 0;
  r.latent = 0;
  return r;
}

double micro_loss(MicroScene& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const FrameState s = m.model.forward(micro_request(m), micro_options(&rng, false), m.render);
  const LossTerms t = frame_objective(m.model, s, m.gt_rgb, m.gt_mask, m.weights, *m.perceptual, nullptr);
  return t.total + m.weights.skin * skinning_loss(m.model.skinning, m.skin_samples, 0.0);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  MicroScene m = make_micro_scene(opt.seed);
  const std::uint64_t aug_seed = opt.seed + 17;

  m.model.zero_grad();
  {
    std::mt19937_64 rng(aug_seed);
    const FrameState s = m.model.forward(micro_request(m), micro_options(&rng, opt.flip_delta_scale_grad), m.render);
    FrameGradIn g;
    frame_objective(m.model, s, m.gt_rgb, m.gt_mask, m.weights, *m.perceptual, &g);
    m.model.backward(s, g);
    skinning_loss(m.model.skinning, m.skin_samples, m.weights.skin);
  }

  GradcheckReport report;
  report.loss = micro_loss(m, aug_seed);
  std::mt19937_64 pick(opt.seed + 99);
  auto tensors = m.model.named_tensors();
  for (ParamClass cls : all_param_classes()) {
    GradcheckRow row;
    row.cls = cls;
    double class_max = 0.0;
    for (const auto& nt : tensors) {
      if (nt.cls != cls) continue;
      for (double v : nt.tensor->grad) class_max = std::max(class_max, std::abs(v));
    }
    for (auto& nt : tensors) {
      if (nt.cls != cls) continue;
      Tensor& t = *nt.tensor;
      std::vector<std::size_t> idx(t.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return std::abs(t.grad[a]) > std::abs(t.grad[b]); });
      std::vector<std::size_t> chosen;
      const double floor = 1e-3 * class_max;
      for (std::size_t k = 0; k < idx.size() && chosen.size() < static_cast<std::size_t>(opt.top_entries); ++k) {
        if (std::abs(t.grad[idx[k]]) > floor) chosen.push_back(idx[k]);
      }
      std::vector<std::size_t> rest;
      for (std::size_t k = chosen.size(); k < idx.size() && std::abs(t.grad[idx[k]]) > floor; ++k) rest.push_back(idx[k]);
      std::shuffle(rest.begin(), rest.end(), pick);
      for (std::size_t k = 0; k < rest.size() && k < static_cast<std::size_t>(opt.random_entries); ++k) {
        chosen.push_back(rest[k]);
      }
      for (std::size_t i : chosen) {
        const double orig = t.value[i];
        t.value[i] = orig + opt.epsilon;
        const double up = micro_loss(m, aug_seed);
        t.value[i] = orig - opt.epsilon;
        const double down = micro_loss(m, aug_seed);
        t.value[i] = orig;
        GradcheckEntry e;
        e.tensor = nt.name;
        e.index = i;
        e.analytic = t.grad[i];
        e.numeric = (up - down) / (2.0 * opt.epsilon);
        const double scale = std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-12});
        e.rel_error = std::abs(e.analytic - e.numeric) / scale;
        ++row.checked;
        if (e.rel_error >= row.max_rel_error) {
          row.max_rel_error = e.rel_error;
          row.worst = e;
        }
      }
    }
    row.pass = row.checked > 0 && row.max_rel_error < opt.tolerance;
    report.rows.push_back(row);
  }
  report.pass = std::all_of(report.rows.begin(), report.rows.end(), [](const GradcheckRow& r) { return r.pass; });
  return report;
}

std::string format_gradcheck(const GradcheckReport& report, double tolerance) {
  std::ostringstream os;
  os << "loss " << std::setprecision(10) << report.loss << "\n";
  os << std::left << std::setw(10) << "class" << std::right << std::setw(9) << "checked" << std::setw(14)
     << "max_rel_err" << "  status  worst\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(10) << param_class_name(r.cls) << std::right << std::setw(9) << r.checked
       << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "  "
       << (r.pass ? "pass  " : "FAIL  ") << "  " << r.worst.tensor << "[" << r.worst.index << "] analytic "
       << std::setprecision(8) << r.worst.analytic << " numeric " << r.worst.numeric << "\n";
  }
  os << (report.pass ? "all classes within " : "gradient audit failed, tolerance ") << tolerance << "\n";
  return os.str();
}

}  // namespace gsavatar
