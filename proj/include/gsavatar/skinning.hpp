#pragma once

// Learned forward skinning: coordinate MLP + tree-aware softmax head, the
// weight-blended bone transform, and the rigid transfer of a Gaussian into
// observation space.

#include "gsavatar/mlp.hpp"
#include "gsavatar/skeleton.hpp"

#include <random>
#include <span>

namespace gsavatar {

/// Tree-aware softmax over the kinematic tree.
///
/// Every joint starts with the mass that reached it (the root gets 1). A joint
/// with one child passes sigmoid(o[slot(child)]) of its mass to that child. A
/// joint with several children passes sigmoid(o[gate(joint)]) of its mass
/// down, split across children by softmax(o[slot(child)]). The joint keeps the
/// rest as its skinning weight. Slot 0 is the root's gate, slots 1..B-1 belong
/// to non-root joints in index order, and each non-root branching joint gets
/// one extra gate slot after those. A 24-joint human tree therefore uses 25
/// logits.
class HierarchicalSoftmax {
 public:
  HierarchicalSoftmax() = default;
  explicit HierarchicalSoftmax(const SkinnedTemplate& tmpl);

  std::size_t bones() const { return parents_.size(); }
  std::size_t logits() const { return n_logits_; }

  /// Logits that make the weights uniform over all joints.
  std::vector<double> uniform_prior_logits() const;

  void forward(std::span<const double> logits, std::span<double> weights) const;
  void backward(std::span<const double> logits, std::span<const double> d_weights,
                std::span<double> d_logits) const;

 private:
  std::vector<int> parents_;
  std::vector<std::vector<int>> children_;
  std::vector<int> order_;
  std::vector<int> slot_;  // entry slot of each non-root joint
  std::vector<int> gate_;  // gate slot of each branching joint, -1 otherwise
  std::size_t n_logits_ = 0;
};

struct SkinningFieldConfig {
  int hidden_layers = 4;
  int hidden_width = 128;
  /// Output layer weight scale at init; small values keep the initial field
  /// close to the uniform prior.
  double output_init_scale = 0.01;
};

struct SkinningCache {
  MlpCache mlp;
  Eigen::MatrixXd logits;
  std::vector<unsigned char> clamped;
};

class SkinningField {
 public:
  SkinningField() = default;
  SkinningField(const SkinnedTemplate& tmpl, const SkinningFieldConfig& cfg, std::mt19937_64& rng);

  std::size_t bones() const { return softmax_.bones(); }
  const BoundingBox& bbox() const { return bbox_; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  const HierarchicalSoftmax& softmax() const { return softmax_; }

  /// Positions (3 x N) -> weights (B x N). Points outside the padded box are
  /// clamped onto it and counted.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& positions, SkinningCache* cache = nullptr) const;
  /// Accumulates parameter gradients, returns d(loss)/d(positions).
  Eigen::MatrixXd backward(const SkinningCache& cache, const Eigen::MatrixXd& d_weights);

  std::vector<double> weights_at(const Vec3& p) const;

  std::size_t clamped_count() const { return clamped_; }
  void reset_clamped_count() { clamped_ = 0; }

 private:
  Mlp mlp_;
  HierarchicalSoftmax softmax_;
  BoundingBox bbox_;
  mutable std::size_t clamped_ = 0;
};

/// T = sum_b w_b B_b (not re-orthonormalized).
Mat4 lbs_transform(std::span<const double> weights, const BoneTransforms& bones);
/// Adds w_b * dT to d_bones[b] and returns dL/dw.
std::vector<double> lbs_transform_backward(std::span<const double> weights, const BoneTransforms& bones,
                                           const Mat4& d_transform, std::vector<Mat4>& d_bones);

/// Gaussian after the blended transform: x_o = T x_d, linear block
/// L_o = T[0:3,0:3] R_d (orthonormal only when T is rigid), scale unchanged,
/// covariance L_o diag(s^2) L_o^T.
struct ObservedGaussian {
  Vec3 position;
  Mat3 linear;
  Vec3 scale;
  Mat3 covariance;
};

ObservedGaussian apply_rigid(const Mat4& transform, const Vec3& position, const Mat3& rotation,
                             const Vec3& scale);

/// Mean squared error between the field and barycentric ground-truth
/// weights. When grad_scale != 0 the field's parameter gradients receive
/// grad_scale * dL/dtheta.
double skinning_loss(SkinningField& field, std::span<const SurfaceSample> samples,
                     double grad_scale = 0.0);
double skinning_loss(SkinningField& field, const SkinnedTemplate& tmpl, std::size_t n_samples,
                     std::mt19937_64& rng, double grad_scale = 0.0);

}  // namespace gsavatar
