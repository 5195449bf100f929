#include "gsavatar/model.hpp"

#include <cmath>
#include <stdexcept>

namespace gsavatar {

void FrameGradIn::reset(std::size_t gaussians, std::size_t pixels) {
  d_rgb.assign(3 * pixels, 0.0);
  d_opacity.assign(pixels, 0.0);
  d_observed_position.assign(gaussians, Vec3::Zero());
  d_observed_cov.assign(gaussians, Mat3::Zero());
  d_canonical_position.assign(gaussians, Vec3::Zero());
  d_canonical_cov.assign(gaussians, Mat3::Zero());
}

AvatarModel::AvatarModel(SkinnedTemplate t, const ModelConfig& cfg, const std::vector<PoseParams>& train_poses,
                         std::uint64_t seed)
    : tmpl(std::move(t)), config(cfg) {
  std::mt19937_64 rng(seed);
  gaussians = init_from_template(tmpl, static_cast<std::size_t>(cfg.n_init), rng());
  gaussians.rebuild_knn(static_cast<std::size_t>(cfg.knn));
  skinning = SkinningField(tmpl, cfg.skinning, rng);
  nonrigid = NonRigidField(tmpl, cfg.nonrigid, rng);
  color = ColorMlp(cfg.color_width, rng);
  latents = FrameLatents(std::max<std::size_t>(train_poses.size(), 1));
  const std::size_t flat = PoseParams::flat_size(tmpl.bone_count());
  poses = Tensor(train_poses.size(), flat);
  for (std::size_t f = 0; f < train_poses.size(); ++f) {
    const auto v = train_poses[f].flatten();
    std::copy(v.begin(), v.end(), poses.row(f).begin());
  }
}

PoseParams AvatarModel::pose_row(long row) const {
  if (row < 0 || static_cast<std::size_t>(row) >= poses.rows) throw std::out_of_range("pose row out of range");
  return PoseParams::unflatten(poses.row(static_cast<std::size_t>(row)), bones());
}

std::vector<NamedTensor> AvatarModel::named_tensors() {
  std::vector<NamedTensor> out;
  const char* gnames[] = {"gaussians.position", "gaussians.log_scale", "gaussians.rotation", "gaussians.opacity_logit",
                          "gaussians.feature"};
  const auto gt = gaussians.tensors();
  for (std::size_t k = 0; k < gt.size(); ++k) out.push_back({gnames[k], gt[k], ParamClass::kGaussian, true});
  auto add_mlp = [&](const std::string& prefix, Mlp& mlp, ParamClass cls) {
    const auto ps = mlp.parameters();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      out.push_back({prefix + (k % 2 == 0 ? ".weight" : ".bias") + std::to_string(k / 2), ps[k], cls, false});
    }
  };
  add_mlp("skinning", skinning.mlp(), ParamClass::kSkinning);
  add_mlp("nonrigid", nonrigid.mlp(), ParamClass::kNonRigid);
  out.push_back({"nonrigid.pose_encoder.shared", &nonrigid.pose_encoder().shared(), ParamClass::kNonRigid, false});
  out.push_back({"nonrigid.pose_encoder.bias", &nonrigid.pose_encoder().bias(), ParamClass::kNonRigid, false});
  out.push_back({"hashgrid.table", &nonrigid.hashgrid().table(), ParamClass::kHashGrid, false});
  add_mlp("color", color.mlp(), ParamClass::kColor);
  out.push_back({"latents", &latents.codes(), ParamClass::kLatent, false});
  out.push_back({"poses", &poses, ParamClass::kPose, false});
  return out;
}

void AvatarModel::zero_grad() {
  for (auto& t : named_tensors()) t.tensor->zero_grad();
}

FrameState AvatarModel::forward(const FrameRequest& req, const FrameOptions& opt, const RenderOptions& render_opt) const {
  FrameState s;
  s.request = req;
  s.options = opt;
  const std::size_t n = gaussians.size();
  const std::size_t nb = bones();

  // pose, optional noise on the local rotations, kinematics
  s.base_pose = req.pose_row >= 0 ? pose_row(req.pose_row) : req.pose;
  s.pose = s.base_pose;
  s.noise.assign(nb, Quat::identity());
  if (opt.pose_noise_std > 0.0 && opt.pose_noise_prob > 0.0) {
    if (!opt.rng) throw std::invalid_argument("pose noise requires an rng");
    std::bernoulli_distribution coin(opt.pose_noise_prob);
    std::normal_distribution<double> normal(0.0, opt.pose_noise_std);
    if (coin(*opt.rng)) {
      for (std::size_t j = 0; j < nb; ++j) {
        const Vec3 aa{normal(*opt.rng), normal(*opt.rng), normal(*opt.rng)};
        s.noise[j] = Quat::from_axis_angle(aa);
        s.pose.local_rotations[j] = quat_mul(s.noise[j], s.base_pose.local_rotations[j]);
      }
    }
  }
  s.bones = forward_kinematics(tmpl, s.pose, &s.fk);

  // non-rigid deformation in canonical space
  Eigen::MatrixXd canonical(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) canonical.col(static_cast<Eigen::Index>(i)) = gaussians.position(i);
  s.nonrigid_active = opt.nonrigid;
  if (s.nonrigid_active) {
    s.nonrigid_out = nonrigid.forward(canonical, s.pose, &s.nonrigid_cache);
  } else {
    s.nonrigid_out = Eigen::MatrixXd::Zero(kNonRigidOutputs, static_cast<Eigen::Index>(n));
  }
  s.deformed.resize(3, static_cast<Eigen::Index>(n));
  s.deformed_log_scale.resize(n);
  s.deformed_rotation.resize(n);
  s.deformed_rotmat.resize(n);
  s.canonical_cov.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const Vec3 ls{gaussians.log_scales(i, 0), gaussians.log_scales(i, 1), gaussians.log_scales(i, 2)};
    const DeformedGaussian d =
        deform_gaussian(gaussians.position(i), ls, gaussians.rotation(i), s.nonrigid_out.block<3, 1>(0, c),
                        s.nonrigid_out.block<3, 1>(3, c), s.nonrigid_out.block<3, 1>(6, c));
    s.deformed.col(c) = d.position;
    s.deformed_log_scale[i] = d.log_scale;
    s.deformed_rotation[i] = d.rotation;
    s.deformed_rotmat[i] = quat_to_rotmat(d.rotation);
    s.canonical_cov[i] = covariance_from_linear(quat_to_rotmat(gaussians.rotation(i)), gaussians.scale(i));
  }

  // skinning and rigid transfer
  s.weights = skinning.forward(s.deformed, &s.skin_cache);
  s.transforms.resize(n);
  s.observed.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    s.transforms[i] = lbs_transform({s.weights.col(c).data(), nb}, s.bones);
    s.observed[i] = apply_rigid(s.transforms[i], s.deformed.col(c), s.deformed_rotmat[i],
                                s.deformed_log_scale[i].array().exp());
  }

  // colors
  const Vec3 cam_center = req.camera.center();
  const Eigen::VectorXd zc = latents.code(req.latent);
  s.view_offset.resize(n);
  s.view_canonical.resize(n);
  s.view_augment.assign(n, Mat3::Identity());
  s.color_input.resize(kColorInputs, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    s.view_offset[i] = s.observed[i].position - cam_center;
    const Vec3 d = s.view_offset[i].normalized();
    const ViewDirResult vd = canonicalize_viewdir(d, s.transforms[i].topLeftCorner<3, 3>());
    if (vd.fallback) ++viewdir_fallbacks_;
    s.view_canonical[i] = vd.dir;
    if (opt.viewdir_max_deg > 0.0) {
      if (!opt.rng) throw std::invalid_argument("view direction augmentation requires an rng");
      s.view_augment[i] = viewdir_augmentation(*opt.rng, opt.viewdir_max_deg);
    }
    const auto sh = sh_basis3(s.view_augment[i] * vd.dir);
    for (std::size_t k = 0; k < kFeatureDim; ++k) s.color_input(static_cast<Eigen::Index>(k), c) = gaussians.features(i, k);
    s.color_input.block<kPoseFeatureDim, 1>(32, c) = s.nonrigid_out.block<kPoseFeatureDim, 1>(9, c);
    s.color_input.block<kFrameLatentDim, 1>(48, c) = zc;
    for (int k = 0; k < kShCoeffs; ++k) s.color_input(64 + k, c) = sh[static_cast<std::size_t>(k)];
  }
  const Eigen::MatrixXd rgb = color.forward(s.color_input, &s.color_cache);

  s.scene.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.scene.means[i] = s.observed[i].position;
    s.scene.covariances[i] = s.observed[i].covariance;
    s.scene.opacities[i] = gaussians.opacity(i);
    s.scene.colors[i] = rgb.col(static_cast<Eigen::Index>(i));
  }
  s.image = render(s.scene, req.camera, render_opt, &s.render_cache);
  return s;
}

void AvatarModel::backward(const FrameState& s, const FrameGradIn& g, SplatGrad* splat_grad) {
  const std::size_t n = gaussians.size();
  const std::size_t nb = bones();
  if (s.observed.size() != n) throw std::logic_error("frame state does not match the Gaussian set");
  SplatGrad sg = render_backward(s.scene, s.render_cache, g.d_rgb, g.d_opacity);

  // color decoder
  Eigen::MatrixXd d_rgb(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) d_rgb.col(static_cast<Eigen::Index>(i)) = sg.colors[i];
  const Eigen::MatrixXd d_in = color.backward(s.color_cache, d_rgb);
  Eigen::MatrixXd d_nr = Eigen::MatrixXd::Zero(kNonRigidOutputs, static_cast<Eigen::Index>(n));
  Eigen::VectorXd d_latent = Eigen::VectorXd::Zero(kFrameLatentDim);
  std::vector<Vec3> d_pos_o(n);
  std::vector<Mat3> d_linear3(n, Mat3::Zero());  // gradient on T[0:3,0:3]
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < kFeatureDim; ++k) gaussians.features.g(i, k) += d_in(static_cast<Eigen::Index>(k), c);
    d_nr.block<kPoseFeatureDim, 1>(9, c) = d_in.block<kPoseFeatureDim, 1>(32, c);
    d_latent += d_in.block<kFrameLatentDim, 1>(48, c);
    std::array<double, kShCoeffs> d_sh;
    for (int k = 0; k < kShCoeffs; ++k) d_sh[static_cast<std::size_t>(k)] = d_in(64 + k, c);
    const Vec3 d_aug = sh_basis3_backward(s.view_augment[i] * s.view_canonical[i], d_sh);
    const Vec3 d_canon = s.view_augment[i].transpose() * d_aug;
    const Vec3 d_unit_dir = s.view_offset[i].normalized();
    const ViewDirGrad vg = canonicalize_viewdir_backward(d_unit_dir, s.transforms[i].topLeftCorner<3, 3>(), d_canon);
    d_pos_o[i] = sg.means[i] + g.d_observed_position[i] + normalize_vec_backward(s.view_offset[i], vg.d_dir);
    d_linear3[i] += vg.d_linear;
    gaussians.opacity_logits.g(i, 0) += sg.opacities[i] * s.scene.opacities[i] * (1.0 - s.scene.opacities[i]);
  }
  latents.add_grad(s.request.latent, d_latent);

  // rigid transfer and blend weights
  std::vector<Mat4> d_bones(nb, Mat4::Zero());
  Eigen::MatrixXd d_weights(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(n));
  Eigen::MatrixXd d_deformed(3, static_cast<Eigen::Index>(n));
  std::vector<Vec3> d_ls_d(n);
  std::vector<Quat> d_q_d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const ObservedGaussian& o = s.observed[i];
    const Mat3 t3 = s.transforms[i].topLeftCorner<3, 3>();
    const Mat3 d_cov = sg.covariances[i] + g.d_observed_cov[i];
    const CovarianceGrad cg = covariance_from_linear_backward(o.linear, o.scale, d_cov);
    Mat4 d_t = Mat4::Zero();
    d_t.topLeftCorner<3, 3>() = d_linear3[i] + cg.d_linear * s.deformed_rotmat[i].transpose() +
                                d_pos_o[i] * s.deformed.col(c).transpose();
    d_t.topRightCorner<3, 1>() = d_pos_o[i];
    const Mat3 d_rot = t3.transpose() * cg.d_linear;
    d_deformed.col(c) = t3.transpose() * d_pos_o[i];
    d_ls_d[i] = cg.d_scale.cwiseProduct(o.scale);
    d_q_d[i] = quat_to_rotmat_backward(s.deformed_rotation[i], d_rot);
    const auto dw = lbs_transform_backward({s.weights.col(c).data(), nb}, s.bones, d_t, d_bones);
    for (std::size_t b = 0; b < nb; ++b) d_weights(static_cast<Eigen::Index>(b), c) = dw[b];
  }
  d_deformed += skinning.backward(s.skin_cache, d_weights);

  // deformation rules back onto canonical parameters and network outputs
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const DeformGrad dg = deform_gaussian_backward(gaussians.rotation(i), s.nonrigid_out.block<3, 1>(6, c),
                                                   d_deformed.col(c), d_ls_d[i], d_q_d[i]);
    Vec3 d_pos = dg.position + g.d_canonical_position[i];
    Vec3 d_ls = dg.log_scale;
    Quat d_q = dg.rotation;
    // canonical covariance (AIAP)
    if (!g.d_canonical_cov[i].isZero(0.0)) {
      const Quat q = gaussians.rotation(i);
      const Vec3 sc = gaussians.scale(i);
      const CovarianceGrad cg = covariance_from_linear_backward(quat_to_rotmat(q), sc, g.d_canonical_cov[i]);
      const Quat dq = quat_to_rotmat_backward(q, cg.d_linear);
      d_q = Quat{d_q.w + dq.w, d_q.x + dq.x, d_q.y + dq.y, d_q.z + dq.z};
      d_ls += cg.d_scale.cwiseProduct(sc);
    }
    for (int a = 0; a < 3; ++a) {
      gaussians.positions.g(i, static_cast<std::size_t>(a)) += d_pos[a];
      gaussians.log_scales.g(i, static_cast<std::size_t>(a)) += d_ls[a];
    }
    gaussians.rotations.g(i, 0) += d_q.w;
    gaussians.rotations.g(i, 1) += d_q.x;
    gaussians.rotations.g(i, 2) += d_q.y;
    gaussians.rotations.g(i, 3) += d_q.z;
    d_nr.block<3, 1>(0, c) = dg.d_position;
    d_nr.block<3, 1>(3, c) = s.options.flip_delta_scale_grad ? Vec3(-dg.d_log_scale) : dg.d_log_scale;
    d_nr.block<3, 1>(6, c) = dg.d_rotation;
  }

  PoseGrad pg = forward_kinematics_backward(tmpl, s.pose, s.fk, d_bones);
  if (s.nonrigid_active) {
    const NonRigidGrad ng = nonrigid.backward(s.nonrigid_cache, s.pose, d_nr);
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        gaussians.positions.g(i, static_cast<std::size_t>(a)) += ng.d_positions(a, static_cast<Eigen::Index>(i));
      }
    }
    for (std::size_t j = 0; j < nb; ++j) {
      const Quat& q = ng.d_local_rotations[j];
      Quat& p = pg.local_rotations[j];
      p = Quat{p.w + q.w, p.x + q.x, p.y + q.y, p.z + q.z};
    }
  }

  if (s.request.pose_row >= 0) {
    for (std::size_t j = 0; j < nb; ++j) {
      pg.local_rotations[j] = quat_mul_backward(s.noise[j], s.base_pose.local_rotations[j], pg.local_rotations[j]).second;
    }
    const auto flat = pg.flatten();
    auto row = poses.grad_row(static_cast<std::size_t>(s.request.pose_row));
    for (std::size_t k = 0; k < flat.size(); ++k) row[k] += flat[k];
  }
  if (splat_grad) *splat_grad = std::move(sg);
}

double skin_weight(const LossConfig& cfg, long iteration) {
  return iteration < cfg.skin_switch ? cfg.skin : cfg.skin_late;
}

LossTerms frame_objective(const AvatarModel& model, const FrameState& s, const Image& gt_rgb, const Image& gt_mask,
                          const LossConfig& w, const PerceptualLoss& perceptual, FrameGradIn* grad) {
  const Framebuffer& fb = s.image;
  if (gt_rgb.width != fb.width || gt_rgb.height != fb.height || gt_rgb.channels != 3) {
    throw std::invalid_argument("ground-truth image does not match the render size");
  }
  if (gt_mask.width != fb.width || gt_mask.height != fb.height || gt_mask.channels != 1) {
    throw std::invalid_argument("ground-truth mask does not match the render size");
  }
  const std::size_t n = model.gaussians.size();
  if (grad) grad->reset(n, fb.pixels());
  LossTerms t;

  const LossValue l1 = loss_l1(fb.rgb, gt_rgb.data);
  t.l1 = l1.value;
  const LossValue mask = loss_mask(fb.opacity, gt_mask.data);
  t.mask = mask.value;
  const PixelRect crop = mask_bbox(gt_mask.data, fb.width, fb.height);
  const LossValue perc = perceptual.evaluate(fb.rgb, gt_rgb.data, fb.width, fb.height, crop);
  t.perc = perc.value;

  std::vector<Vec3> canon(n), obs(n);
  std::vector<Mat3> obs_cov(n);
  for (std::size_t i = 0; i < n; ++i) {
    canon[i] = model.gaussians.position(i);
    obs[i] = s.observed[i].position;
    obs_cov[i] = s.observed[i].covariance;
  }
  const AiapPositionResult ap = loss_aiap_position(canon, obs, model.gaussians.knn);
  const AiapCovarianceResult ac = loss_aiap_covariance(s.canonical_cov, obs_cov, model.gaussians.knn);
  t.isopos = ap.value;
  t.isocov = ac.value;
  t.total = w.l1 * t.l1 + w.perc * t.perc + w.mask * t.mask + w.isopos * t.isopos + w.isocov * t.isocov;

  if (grad) {
    for (std::size_t k = 0; k < grad->d_rgb.size(); ++k) grad->d_rgb[k] = w.l1 * l1.grad[k] + w.perc * perc.grad[k];
    for (std::size_t k = 0; k < grad->d_opacity.size(); ++k) grad->d_opacity[k] = w.mask * mask.grad[k];
    for (std::size_t i = 0; i < n; ++i) {
      grad->d_observed_position[i] = w.isopos * ap.d_observed[i];
      grad->d_canonical_position[i] = w.isopos * ap.d_canonical[i];
      grad->d_observed_cov[i] = w.isocov * ac.d_observed[i];
      grad->d_canonical_cov[i] = w.isocov * ac.d_canonical[i];
    }
  }
  return t;
}

}  // namespace gsavatar
