#pragma once

// Pose-dependent non-rigid deformation: hash-grid features of the canonical
// position and a pose latent feed an MLP that predicts offsets of position,
// log-scale and rotation plus a feature vector z for the color decoder.

#include "gsavatar/hashgrid.hpp"
#include "gsavatar/mlp.hpp"
#include "gsavatar/skeleton.hpp"

#include <random>
#include <vector>

namespace gsavatar {

inline constexpr int kPoseFeatureDim = 16;  // z
inline constexpr int kNonRigidOutputs = 9 + kPoseFeatureDim;

/// Stand-in for a hierarchical pose encoder. Each joint's normalized local
/// rotation goes through a shared linear map plus a per-joint bias and a
/// tanh; the result is summed along the ancestor chain and averaged over
/// joints:
///   a_j = tanh(A q_j + c_j) + a_parent(j),   Z_p = mean_j a_j
class PoseEncoder {
 public:
  PoseEncoder() = default;
  PoseEncoder(const SkinnedTemplate& tmpl, int dim, std::mt19937_64& rng);

  int dim() const { return dim_; }
  Eigen::VectorXd forward(const PoseParams& pose) const;
  /// Accumulates parameter gradients; returns d(loss)/d(local rotations).
  std::vector<Quat> backward(const PoseParams& pose, const Eigen::VectorXd& d_latent);

  Tensor& shared() { return shared_; }
  Tensor& bias() { return bias_; }
  const Tensor& shared() const { return shared_; }
  const Tensor& bias() const { return bias_; }

 private:
  std::vector<int> parents_;
  std::vector<int> order_;
  int dim_ = 0;
  Tensor shared_;  // dim x 4
  Tensor bias_;    // joints x dim
};

struct NonRigidConfig {
  int depth = 3;
  int width = 128;
  int pose_dim = 64;
  HashGridConfig hashgrid;
};

struct NonRigidCache {
  Eigen::MatrixXd normalized;  // 3 x N, clamped into [0,1]
  std::vector<unsigned char> clamped;
  MlpCache mlp;
};

struct NonRigidGrad {
  Eigen::MatrixXd d_positions;  // 3 x N
  std::vector<Quat> d_local_rotations;
};

class NonRigidField {
 public:
  NonRigidField() = default;
  /// The output layer starts at zero, so the initial deformation is the identity.
  NonRigidField(const SkinnedTemplate& tmpl, const NonRigidConfig& cfg, std::mt19937_64& rng);

  const NonRigidConfig& config() const { return cfg_; }
  HashGrid& hashgrid() { return grid_; }
  const HashGrid& hashgrid() const { return grid_; }
  PoseEncoder& pose_encoder() { return encoder_; }
  const PoseEncoder& pose_encoder() const { return encoder_; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  const BoundingBox& bbox() const { return bbox_; }

  /// Canonical positions (3 x N) -> rows [dx(3), ds(3), dq(3), z(16)] x N.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& positions, const PoseParams& pose,
                          NonRigidCache* cache = nullptr) const;
  NonRigidGrad backward(const NonRigidCache& cache, const PoseParams& pose, const Eigen::MatrixXd& d_out);

 private:
  NonRigidConfig cfg_;
  BoundingBox bbox_;
  HashGrid grid_;
  PoseEncoder encoder_;
  Mlp mlp_;
};

/// x_d = x_c + dx, log s_d = log s_c + ds, q_d = n(q_c) * n([1, dq]).
struct DeformedGaussian {
  Vec3 position;
  Vec3 log_scale;
  Quat rotation;  // unit
};

DeformedGaussian deform_gaussian(const Vec3& position, const Vec3& log_scale, const Quat& rotation,
                                 const Vec3& d_position, const Vec3& d_log_scale, const Vec3& d_rotation);

struct DeformGrad {
  Vec3 position;
  Vec3 log_scale;
  Quat rotation;
  Vec3 d_position;
  Vec3 d_log_scale;
  Vec3 d_rotation;
};

DeformGrad deform_gaussian_backward(const Quat& rotation, const Vec3& d_rotation, const Vec3& g_position,
                                    const Vec3& g_log_scale, const Quat& g_rotation);

}  // namespace gsavatar
