#pragma once

// The articulated avatar: canonical Gaussians, non-rigid deformation,
// learned skinning, color decoding and splat rendering for one frame, with
// the matching reverse pass into every learnable tensor.

#include "gsavatar/appearance.hpp"
#include "gsavatar/camera.hpp"
#include "gsavatar/config.hpp"
#include "gsavatar/deformation.hpp"
#include "gsavatar/gaussians.hpp"
#include "gsavatar/image_io.hpp"
#include "gsavatar/losses.hpp"
#include "gsavatar/optimizer.hpp"
#include "gsavatar/rasterizer.hpp"
#include "gsavatar/skinning.hpp"

#include <random>

namespace gsavatar {

struct FrameRequest {
  Camera camera;
  PoseParams pose;     // used when pose_row < 0
  long pose_row = -1;  // learnable per-frame pose
  long latent = -1;    // frame latent; out of range selects the last code
};

struct FrameOptions {
  bool nonrigid = true;
  double pose_noise_std = 0.0;
  double pose_noise_prob = 0.0;
  double viewdir_max_deg = 0.0;
  std::mt19937_64* rng = nullptr;  // required when any augmentation is on
  /// Fault injection for the gradient audit: negates the log-scale offset
  /// gradient on its way into the deformation network.
  bool flip_delta_scale_grad = false;
};

struct FrameState {
  FrameRequest request;
  FrameOptions options;
  PoseParams base_pose;
  PoseParams pose;            // after noise
  std::vector<Quat> noise;    // per joint, composed on the left
  FkCache fk;
  BoneTransforms bones;

  bool nonrigid_active = false;
  NonRigidCache nonrigid_cache;
  Eigen::MatrixXd nonrigid_out;  // 25 x N

  Eigen::MatrixXd deformed;  // 3 x N
  std::vector<Vec3> deformed_log_scale;
  std::vector<Quat> deformed_rotation;
  std::vector<Mat3> deformed_rotmat;

  SkinningCache skin_cache;
  Eigen::MatrixXd weights;  // B x N
  std::vector<Mat4> transforms;
  std::vector<ObservedGaussian> observed;
  std::vector<Mat3> canonical_cov;

  std::vector<Vec3> view_offset;  // x_o - camera center
  std::vector<Vec3> view_canonical;
  std::vector<Mat3> view_augment;
  Eigen::MatrixXd color_input;  // 80 x N
  ColorCache color_cache;

  SplatScene scene;
  RenderCache render_cache;
  Framebuffer image;
};

/// Extra upstream gradients besides the image terms.
struct FrameGradIn {
  std::vector<double> d_rgb;
  std::vector<double> d_opacity;
  std::vector<Vec3> d_observed_position;
  std::vector<Mat3> d_observed_cov;
  std::vector<Vec3> d_canonical_position;
  std::vector<Mat3> d_canonical_cov;

  void reset(std::size_t gaussians, std::size_t pixels);
};

struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
  ParamClass cls = ParamClass::kGaussian;
  bool per_gaussian = false;
};

class AvatarModel {
 public:
  AvatarModel() = default;
  AvatarModel(SkinnedTemplate tmpl, const ModelConfig& cfg, const std::vector<PoseParams>& train_poses,
              std::uint64_t seed);

  SkinnedTemplate tmpl;
  ModelConfig config;
  GaussianSet gaussians;
  SkinningField skinning;
  NonRigidField nonrigid;
  ColorMlp color;
  FrameLatents latents;
  Tensor poses;  // train frames x PoseParams::flat_size

  std::size_t bones() const { return tmpl.bone_count(); }
  PoseParams pose_row(long row) const;

  /// Every learnable tensor, in a fixed order.
  std::vector<NamedTensor> named_tensors();
  void zero_grad();

  FrameState forward(const FrameRequest& req, const FrameOptions& opt, const RenderOptions& render) const;
  /// Accumulates gradients into every tensor. `splat_grad` receives the
  /// renderer-level gradients (for densification statistics).
  void backward(const FrameState& s, const FrameGradIn& g, SplatGrad* splat_grad = nullptr);

  std::size_t viewdir_fallbacks() const { return viewdir_fallbacks_; }

 private:
  mutable std::size_t viewdir_fallbacks_ = 0;
};

struct LossTerms {
  double l1 = 0.0;
  double perc = 0.0;
  double mask = 0.0;
  double skin = 0.0;
  double isopos = 0.0;
  double isocov = 0.0;
  double total = 0.0;
};

/// Weighted image, mask, perceptual and AIAP terms for a rendered frame.
/// The skinning term is separate (see skinning_loss). Fills `grad` with the
/// weighted upstream gradients when given.
LossTerms frame_objective(const AvatarModel& model, const FrameState& s, const Image& gt_rgb, const Image& gt_mask,
                          const LossConfig& weights, const PerceptualLoss& perceptual, FrameGradIn* grad);

/// Skinning-loss weight at an iteration.
double skin_weight(const LossConfig& cfg, long iteration);

}  // namespace gsavatar
