// End-to-end acceptance checks. Prints one PASS/FAIL line per check and
// exits non-zero if any fails.
//
//   acceptance [--work DIR] [--only NAME,...]

#include "gsavatar/checkpoint.hpp"
#include "gsavatar/gradcheck.hpp"
#include "gsavatar/losses.hpp"
#include "gsavatar/metrics.hpp"
#include "gsavatar/model.hpp"
#include "gsavatar/skinning.hpp"
#include "gsavatar/synthetic.hpp"
#include "gsavatar/trainer.hpp"
#include "render_oracle.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace gsavatar;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

Camera random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> az(0.0, 360.0), el(-30.0, 30.0);
  SynthConfig sc;
  return orbit_camera(sc, az(rng), el(rng));
}

// ---------------------------------------------------------------------------

Outcome check_tiled_renderer() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> count(1, 100);
  const RenderOptions opt;
  double worst = 0.0, worst_untruncated = 0.0;
  for (int scene = 0; scene < 50; ++scene) {
    const SplatScene sc = test::random_scene(rng, count(rng));
    const Camera cam = random_camera(rng);
    const Framebuffer fb = render(sc, cam, opt);
    const test::OracleImage same_rule = test::oracle_render(sc, cam, opt, opt.min_transmittance);
    const test::OracleImage untruncated = test::oracle_render(sc, cam, opt, 0.0);
    for (std::size_t k = 0; k < fb.rgb.size(); ++k) {
      worst = std::max(worst, std::abs(fb.rgb[k] - same_rule.rgb[k]));
      worst_untruncated = std::max(worst_untruncated, std::abs(fb.rgb[k] - untruncated.rgb[k]));
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst <= 1e-6 && secs < 30.0;
  o.detail = "50 scenes, max |tiled - oracle| = " + sci(worst) + " (oracle without early stop: " +
             sci(worst_untruncated) + "), " + fmt(secs) + " s";
  return o;
}

Outcome check_gradients() {
  const auto t0 = Clock::now();
  const GradcheckReport r = run_gradcheck(GradcheckOptions{});
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_class;
  for (const auto& row : r.rows) {
    if (row.max_rel_error >= worst) {
      worst = row.max_rel_error;
      worst_class = param_class_name(row.cls);
    }
  }
  Outcome o;
  o.pass = r.pass && r.rows.size() == 7 && secs < 120.0;
  o.detail = std::to_string(r.rows.size()) + " classes, worst rel err " + sci(worst) + " (" + worst_class + "), " +
             fmt(secs) + " s";
  return o;
}

Outcome check_aiap_rigid() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> xc(200);
  std::vector<Mat3> cc(200);
  for (std::size_t i = 0; i < 200; ++i) {
    xc[i] = Vec3(n(rng), n(rng), n(rng)) * 0.3;
    const Quat q = Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
    cc[i] = build_covariance(Vec3(std::exp(n(rng) - 3), std::exp(n(rng) - 3), std::exp(n(rng) - 3)), q);
  }
  const KnnGraph knn = knn_build(xc, 5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 r = quat_to_rotmat(Quat{n(rng), n(rng), n(rng), n(rng)}.normalized());
    const Vec3 t(n(rng), n(rng), n(rng));
    std::vector<Vec3> xo(200);
    std::vector<Mat3> co(200);
    for (std::size_t i = 0; i < 200; ++i) {
      xo[i] = r * xc[i] + t;
      co[i] = r * cc[i] * r.transpose();
    }
    worst = std::max({worst, loss_aiap_position(xc, xo, knn).value, loss_aiap_covariance(cc, co, knn).value});
  }
  return {worst < 1e-9, "100 rigid motions of 200 Gaussians, max loss " + sci(worst)};
}

Outcome check_identity_at_init() {
  const SkinnedTemplate tmpl = make_capsule_chain(2, 0.5, 0.16);
  ModelConfig mc;
  mc.n_init = 500;
  const AvatarModel model(tmpl, mc, {PoseParams::identity(2)}, 9);
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int view = 0; view < 4; ++view) {
    FrameRequest req;
    req.camera = random_camera(rng);
    req.pose = PoseParams::identity(2);
    const FrameState s = model.forward(req, FrameOptions{}, RenderOptions{});
    SplatScene canon;
    canon.resize(model.gaussians.size());
    for (std::size_t i = 0; i < canon.size(); ++i) {
      canon.means[i] = model.gaussians.position(i);
      canon.covariances[i] = build_covariance(model.gaussians.scale(i), model.gaussians.rotation(i));
      canon.opacities[i] = model.gaussians.opacity(i);
      canon.colors[i] = s.scene.colors[i];
    }
    const Framebuffer ref = render(canon, req.camera);
    for (std::size_t k = 0; k < ref.rgb.size(); ++k) worst = std::max(worst, std::abs(ref.rgb[k] - s.image.rgb[k]));
  }
  return {worst <= 1e-7, "500 Gaussians, 4 views, max pixel diff " + sci(worst)};
}

Outcome check_lbs_one_hot() {
  const SkinnedTemplate tmpl = make_capsule_chain(4, 0.4, 0.1);
  std::mt19937_64 rng(404);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    PoseParams p = PoseParams::identity(4);
    for (auto& q : p.local_rotations) q = Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
    p.global_rotation = Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
    p.translation = Vec3(n(rng), n(rng), n(rng));
    const BoneTransforms bones = forward_kinematics(tmpl, p);
    for (std::size_t b = 0; b < 4; ++b) {
      std::vector<double> w(4, 0.0);
      w[b] = 1.0;
      const Vec3 x(n(rng), n(rng), n(rng));
      const Quat q = Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
      const Vec3 s(0.1, 0.02, 0.05);
      const ObservedGaussian g = apply_rigid(lbs_transform(w, bones), x, quat_to_rotmat(q), s);
      const Mat3 r = bones[b].topLeftCorner<3, 3>();
      worst = std::max(worst, (g.position - transform_point(bones[b], x)).cwiseAbs().maxCoeff());
      worst = std::max(worst, (g.covariance - r * build_covariance(s, q) * r.transpose()).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-12, "50 poses x 4 bones, max deviation " + sci(worst)};
}

// ---------------------------------------------------------------------------
// Training runs shared by the end-to-end checks.

struct RunKey {
  std::uint64_t seed;
  bool aiap;
  int repeat;
  auto operator<=>(const RunKey&) const = default;
};

struct Run {
  TrainResult result;
  std::vector<FrameEval> eval;
  double seconds = 0.0;
  // per parameter class: hash after each step where it changed, and at init
  std::map<ParamClass, std::uint64_t> init_hash;
  std::map<ParamClass, long> first_change;  // first iteration whose step changed the class
};

std::map<ParamClass, std::uint64_t> class_hashes(AvatarModel& m) {
  std::map<ParamClass, std::uint64_t> h;
  for (ParamClass c : all_param_classes()) h[c] = 0xcbf29ce484222325ULL;
  for (const auto& nt : m.named_tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(nt.tensor->value.data());
    h[nt.cls] = fnv1a64({bytes, nt.tensor->value.size() * sizeof(double)}, h[nt.cls]);
  }
  return h;
}

class Runner {
 public:
  Runner(fs::path work, Config base) : work_(std::move(work)), base_(std::move(base)) {}

  const Dataset& dataset() {
    if (!dataset_) {
      const fs::path dir = work_ / "dataset";
      write_synthetic_dataset(base_.synth, dir.string());
      dataset_ = load_dataset(dir.string());
    }
    return *dataset_;
  }

  Config config(const RunKey& k) const {
    Config c = base_;
    c.train.seed = k.seed;
    if (!k.aiap) {
      c.loss.isopos = 0.0;
      c.loss.isocov = 0.0;
    }
    return c;
  }

  Run& get(const RunKey& k) {
    auto it = runs_.find(k);
    if (it != runs_.end()) return it->second;
    const Dataset& ds = dataset();
    const Config cfg = config(k);
    Run run;
    AvatarModel init = init_model(cfg, ds);
    run.init_hash = class_hashes(init);
    auto last = run.init_hash;
    TrainOptions opt;
    opt.out_dir = (work_ / ("run_s" + std::to_string(k.seed) + (k.aiap ? "_aiap" : "_noaiap") + "_" +
                            std::to_string(k.repeat)))
                      .string();
    opt.on_step = [&](long t, const AvatarModel& m) {
      auto now = class_hashes(const_cast<AvatarModel&>(m));
      for (const auto& [c, h] : now) {
        if (h != last[c] && !run.first_change.count(c)) run.first_change[c] = t;
      }
      last = std::move(now);
    };
    std::cerr << "training seed " << k.seed << (k.aiap ? " with" : " without") << " AIAP (run " << k.repeat
              << ")\n";
    const auto t0 = Clock::now();
    run.result = train(cfg, ds, opt);
    run.seconds = seconds_since(t0);
    run.eval = evaluate_frames(run.result.model, ds, cfg.render, true);
    std::cerr << "  done in " << fmt(run.seconds) << " s\n";
    return runs_.emplace(k, std::move(run)).first->second;
  }

  const Config& base() const { return base_; }

 private:
  fs::path work_;
  Config base_;
  std::optional<Dataset> dataset_;
  std::map<RunKey, Run> runs_;
};

Outcome check_end_to_end(Runner& runner) {
  Run& run = runner.get({0, true, 0});
  double psnr_sum = 0.0, iou_sum = 0.0, novel_iou_min = 1.0;
  int n_train = 0;
  bool finite = true;
  for (const auto& e : run.eval) {
    if (e.train) {
      psnr_sum += e.psnr;
      iou_sum += e.iou;
      ++n_train;
    } else {
      finite = finite && e.finite;
      novel_iou_min = std::min(novel_iou_min, e.iou);
    }
  }
  const double psnr_mean = psnr_sum / n_train, iou_mean = iou_sum / n_train;
  Outcome o;
  o.pass = psnr_mean >= 30.0 && iou_mean >= 0.9 && finite && novel_iou_min >= 0.8;
  o.detail = "train PSNR " + fmt(psnr_mean, 4) + " dB, train IoU " + fmt(iou_mean) + ", novel-pose IoU min " +
             fmt(novel_iou_min) + (finite ? ", finite" : ", NON-FINITE") + " (" + fmt(run.seconds) + " s)";
  return o;
}

Outcome check_aiap_ablation(Runner& runner) {
  Outcome o;
  o.pass = true;
  std::ostringstream detail;
  detail << "scattered splats on novel poses, with/without AIAP:";
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    std::size_t with = 0, without = 0;
    for (const auto& e : runner.get({seed, true, 0}).eval) {
      if (!e.train) with += e.scattered;
    }
    for (const auto& e : runner.get({seed, false, 0}).eval) {
      if (!e.train) without += e.scattered;
    }
    o.pass = o.pass && without > with;
    detail << " seed " << seed << " " << with << "/" << without << ";";
  }
  o.detail = detail.str();
  return o;
}

Outcome check_gates(Runner& runner) {
  Run& run = runner.get({0, true, 0});
  const auto& s = runner.base().schedule;
  const std::map<ParamClass, long> gate{{ParamClass::kSkinning, 0},         {ParamClass::kGaussian, s.gaussian_gate},
                                        {ParamClass::kColor, s.gaussian_gate}, {ParamClass::kLatent, s.gaussian_gate},
                                        {ParamClass::kNonRigid, s.nonrigid_gate}, {ParamClass::kHashGrid, s.nonrigid_gate},
                                        {ParamClass::kPose, s.pose_gate}};
  Outcome o;
  o.pass = true;
  std::ostringstream detail;
  for (const auto& [c, g] : gate) {
    const auto it = run.first_change.find(c);
    const long first = it == run.first_change.end() ? -1 : it->second;
    // bit-identical through step g-1 and trained afterwards. The hash grid's
    // first step is a no-op: the non-rigid output layer starts at zero.
    o.pass = o.pass && first >= g;
    detail << param_class_name(c) << " first update " << first << " (gate " << g << ") ";
  }
  o.detail = detail.str();
  return o;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome check_determinism(Runner& runner) {
  Run& a = runner.get({0, true, 0});
  Run& b = runner.get({0, true, 1});
  const std::uint64_t ha = hash_file(a.result.checkpoint_path), hb = hash_file(b.result.checkpoint_path);
  const bool csv_same = read_file(a.result.metrics_path) == read_file(b.result.metrics_path);
  return {ha == hb && csv_same, "checkpoint " + hex64(ha) + " vs " + hex64(hb) + ", metrics CSV " +
                                    (csv_same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = (fs::temp_directory_path() / "gsavatar_acceptance").string();
  std::string config_path = std::string(GSAVATAR_SOURCE_DIR) + "/configs/acceptance.toml";
  std::vector<std::string> only;
  app.add_option("--work", work, "Scratch directory for datasets and runs");
  app.add_option("--config", config_path, "Training configuration for the end-to-end checks");
  app.add_option("--only", only, "Run only these checks")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);
  Runner runner(work, Config::load(config_path));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"tiled-renderer", check_tiled_renderer},
      {"gradients", check_gradients},
      {"aiap-rigid", check_aiap_rigid},
      {"identity-at-init", check_identity_at_init},
      {"lbs-one-hot", check_lbs_one_hot},
      {"end-to-end-fit", [&] { return check_end_to_end(runner); }},
      {"aiap-ablation", [&] { return check_aiap_ablation(runner); }},
      {"stage-gates", [&] { return check_gates(runner); }},
      {"determinism", [&] { return check_determinism(runner); }},
  };
  const std::set<std::string> selected(only.begin(), only.end());
  bool all = true;
  for (const auto& [name, fn] : checks) {
    if (!selected.empty() && !selected.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << std::left << std::setw(17) << name << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
