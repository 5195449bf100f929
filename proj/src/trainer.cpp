#include "gsavatar/trainer.hpp"

#include "gsavatar/checkpoint.hpp"
#include "gsavatar/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace gsavatar {

namespace {

long train_index(const Dataset& ds, const DatasetFrame& f) {
  long k = 0;
  for (const auto& g : ds.frames) {
    if (&g == &f) return g.train ? k : -1;
    if (g.train) ++k;
  }
  return -1;
}

void banner(std::ostream* log, long iteration, const std::string& what) {
  if (log) *log << "== iteration " << iteration << ": " << what << " ==\n";
}

std::vector<std::size_t> non_finite_gaussians(AvatarModel& model, const FrameState& s) {
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
    bool ok = s.observed.size() > i && s.observed[i].position.allFinite() && s.observed[i].covariance.allFinite() &&
              s.scene.colors[i].allFinite();
    for (auto* t : model.gaussians.tensors()) {
      for (double v : t->row(i)) ok = ok && std::isfinite(v);
    }
    if (!ok) bad.push_back(i);
  }
  return bad;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iteration,l1,perc,mask,skin,isopos,isocov,total,psnr\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.loss.l1 << ',' << r.loss.perc << ',' << r.loss.mask << ',' << r.loss.skin << ','
        << r.loss.isopos << ',' << r.loss.isocov << ',' << r.loss.total << ',';
    if (r.psnr) out << *r.psnr;
    out << '\n';
  }
}

void register_parameters(ParamStore& store, AvatarModel& model, const Config& cfg) {
  const long total = cfg.schedule.iterations;
  const auto& lr = cfg.lr;
  const auto net = exponential_decay(lr.networks, lr.network_decay, total);
  for (auto& nt : model.named_tensors()) {
    switch (nt.cls) {
      case ParamClass::kGaussian: {
        std::function<double(long)> f;
        if (nt.name == "gaussians.position") f = log_linear(lr.position, lr.position_final, total);
        else if (nt.name == "gaussians.log_scale") f = constant_lr(lr.scale);
        else if (nt.name == "gaussians.rotation") f = constant_lr(lr.rotation);
        else if (nt.name == "gaussians.opacity_logit") f = constant_lr(lr.opacity);
        else f = constant_lr(lr.feature);
        store.add(nt.name, nt.tensor, nt.cls, cfg.schedule.gaussian_gate, f, true);
        break;
      }
      case ParamClass::kSkinning:
        store.add(nt.name, nt.tensor, nt.cls, 0, exponential_decay(lr.skinning, lr.network_decay, total));
        break;
      case ParamClass::kNonRigid:
      case ParamClass::kHashGrid:
        store.add(nt.name, nt.tensor, nt.cls, cfg.schedule.nonrigid_gate, net);
        break;
      case ParamClass::kColor:
        store.add(nt.name, nt.tensor, nt.cls, cfg.schedule.gaussian_gate, net);
        break;
      case ParamClass::kLatent:
        store.add(nt.name, nt.tensor, nt.cls, cfg.schedule.gaussian_gate, net).weight_decay = lr.latent_weight_decay;
        break;
      case ParamClass::kPose: {
        ParamEntry& e = store.add(nt.name, nt.tensor, nt.cls, cfg.schedule.pose_gate, net);
        e.frozen_cols.assign(nt.tensor->cols, 0);
        if (!lr.optimize_pose_scale && nt.tensor->cols > 0) e.frozen_cols.back() = 1;
        break;
      }
    }
  }
}

double scene_extent_from_cameras(const std::vector<Camera>& cams) {
  if (cams.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& c : cams) mean += c.center();
  mean /= static_cast<double>(cams.size());
  double r = 0.0;
  for (const auto& c : cams) r = std::max(r, (c.center() - mean).norm());
  return r > 0.0 ? 1.1 * r : 1.0;
}

AvatarModel init_model(const Config& cfg, const Dataset& ds) {
  std::vector<PoseParams> poses;
  for (const auto* f : ds.split(true)) poses.push_back(f->pose);
  return AvatarModel(ds.tmpl, cfg.model, poses, cfg.train.seed);
}

FrameState render_dataset_frame(const AvatarModel& model, const Dataset& ds, const DatasetFrame& f,
                                const RenderOptions& render, bool nonrigid) {
  FrameRequest req;
  req.camera = ds.cameras[static_cast<std::size_t>(f.camera)];
  const long k = train_index(ds, f);
  if (k >= 0 && static_cast<std::size_t>(k) < model.poses.rows) {
    req.pose_row = k;
    req.latent = k;
  } else {
    req.pose = f.pose;
    req.latent = -1;
  }
  FrameOptions opt;
  opt.nonrigid = nonrigid;
  return model.forward(req, opt, render);
}

std::size_t count_scattered_splats(const FrameState& s, const SkinnedTemplate& tmpl) {
  const std::vector<Vec3> posed = pose_vertices(tmpl, s.bones);
  std::size_t count = 0;
  for (const auto& g : s.observed) {
    if (distance_to_mesh(g.position, posed, tmpl.triangles()) > 3.0 * g.scale.maxCoeff()) ++count;
  }
  return count;
}

std::vector<FrameEval> evaluate_frames(const AvatarModel& model, const Dataset& ds, const RenderOptions& render,
                                       bool nonrigid) {
  std::vector<FrameEval> out;
  for (const auto& f : ds.frames) {
    const FrameState s = render_dataset_frame(model, ds, f, render, nonrigid);
    FrameEval e;
    e.frame = f.index;
    e.train = f.train;
    for (double v : s.image.rgb) e.finite = e.finite && std::isfinite(v);
    for (double v : s.image.opacity) e.finite = e.finite && std::isfinite(v) && v >= 0.0 && v <= 1.0;
    e.psnr = psnr(s.image.rgb, f.rgb.data);
    e.ssim = ssim(s.image.rgb, f.rgb.data, f.rgb.width, f.rgb.height, 3);
    e.iou = mask_iou(s.image.opacity, f.mask.data);
    e.scattered = count_scattered_splats(s, ds.tmpl);
    out.push_back(e);
  }
  return out;
}

TrainResult train(const Config& cfg, const Dataset& ds, const TrainOptions& opt) {
  cfg.validate();
  const auto train_frames = ds.split(true);
  if (train_frames.empty()) throw std::runtime_error("dataset has no training frames");
  const auto heldout = ds.split(false);
  const DatasetFrame& eval_frame = heldout.empty() ? *train_frames.front() : *heldout.front();

  TrainResult result;
  result.model = init_model(cfg, ds);
  AvatarModel& model = result.model;
  ParamStore store;
  register_parameters(store, model, cfg);
  const AdamConfig adam{cfg.lr.beta1, cfg.lr.beta2, cfg.lr.eps};
  const auto perceptual = make_perceptual_loss(cfg.loss.perceptual);

  DensifyConfig dcfg = cfg.densify.params;
  if (!(dcfg.scene_extent > 0.0)) dcfg.scene_extent = scene_extent_from_cameras(ds.cameras);
  const long total = cfg.schedule.iterations;
  const auto densify_until = static_cast<long>(cfg.densify.until_fraction * static_cast<double>(total));
  DensifyStats stats;
  stats.reset(model.gaussians.size());

  std::mt19937_64 rng(cfg.train.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, train_frames.size() - 1);
  auto held_out_psnr = [&]() {
    const FrameState s = render_dataset_frame(model, ds, eval_frame, cfg.render, true);
    return psnr(s.image.rgb, eval_frame.rgb.data);
  };

  banner(opt.log, 0, "training skinning field");
  for (long t = 0; t < total; ++t) {
    if (t > 0 && t == cfg.schedule.gaussian_gate) banner(opt.log, t, "Gaussians, color decoder and latents unfrozen");
    if (t > 0 && t == cfg.schedule.nonrigid_gate) banner(opt.log, t, "non-rigid deformation unfrozen");
    if (t > 0 && t == cfg.schedule.pose_gate) banner(opt.log, t, "pose correction unfrozen");

    const std::size_t k = pick(rng);
    const DatasetFrame& f = *train_frames[k];
    FrameRequest req;
    req.camera = ds.cameras[static_cast<std::size_t>(f.camera)];
    req.pose_row = static_cast<long>(k);
    req.latent = static_cast<long>(k);
    FrameOptions fo;
    // before its gate the zero-initialized deformation is an exact identity
    fo.nonrigid = t >= cfg.schedule.nonrigid_gate;
    if (cfg.augment.pose_noise) {
      fo.pose_noise_std = cfg.augment.pose_noise_std;
      fo.pose_noise_prob = cfg.augment.pose_noise_prob;
    }
    fo.viewdir_max_deg = cfg.augment.viewdir_max_deg;
    fo.rng = &rng;

    store.zero_grad();
    const FrameState s = model.forward(req, fo, cfg.render);
    FrameGradIn g;
    LossTerms terms = frame_objective(model, s, f.rgb, f.mask, cfg.loss, *perceptual, &g);
    const double ws = skin_weight(cfg.loss, t);
    terms.skin = skinning_loss(model.skinning, model.tmpl, static_cast<std::size_t>(cfg.loss.skin_samples), rng, ws);
    terms.total += ws * terms.skin;
    if (!std::isfinite(terms.total)) {
      const auto bad = non_finite_gaussians(model, s);
      std::ostringstream os;
      os << "non-finite loss at iteration " << t << " (frame " << f.index << "); offending Gaussians:";
      for (std::size_t i : bad) os << ' ' << i;
      if (bad.empty()) os << " none with non-finite parameters";
      throw NonFiniteLossError(os.str(), bad);
    }
    SplatGrad sg;
    model.backward(s, g, &sg);
    store.step(t, adam);

    MetricsRow row;
    row.iteration = t + 1;
    row.loss = terms;

    if (t >= cfg.schedule.gaussian_gate && t < densify_until) {
      for (std::size_t i = 0; i < sg.visible.size(); ++i) {
        if (sg.visible[i]) stats.add(i, sg.view_grad_norm[i]);
      }
      if ((t + 1) % cfg.densify.interval == 0) {
        const DensifyResult d = densify_and_prune(model.gaussians, stats, dcfg, rng);
        store.remap_gaussian_rows(d.source);
        model.gaussians.rebuild_knn(static_cast<std::size_t>(cfg.model.knn));
        stats.reset(model.gaussians.size());
        if (opt.log) {
          *opt.log << "densify at " << t + 1 << ": cloned " << d.cloned << ", split " << d.split << ", pruned "
                   << d.pruned << ", now " << model.gaussians.size() << "\n";
        }
      }
    }
    if (cfg.schedule.eval_interval > 0 && (t + 1) % cfg.schedule.eval_interval == 0) row.psnr = held_out_psnr();
    if (t + 1 == total && !row.psnr) row.psnr = held_out_psnr();
    if (opt.log && cfg.train.log_interval > 0 && ((t + 1) % cfg.train.log_interval == 0 || row.psnr)) {
      *opt.log << "iter " << t + 1 << " total " << terms.total << " l1 " << terms.l1 << " gaussians "
               << model.gaussians.size();
      if (row.psnr) *opt.log << " psnr " << *row.psnr;
      *opt.log << "\n";
    }
    result.metrics.push_back(row);
    if (opt.on_step) opt.on_step(t, model);
  }

  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    result.checkpoint_path = (std::filesystem::path(opt.out_dir) / "checkpoint.gsck").string();
    result.metrics_path = (std::filesystem::path(opt.out_dir) / "metrics.csv").string();
    save_checkpoint(result.checkpoint_path, cfg, total, model);
    write_metrics_csv(result.metrics_path, result.metrics);
  }
  return result;
}

}  // namespace gsavatar
