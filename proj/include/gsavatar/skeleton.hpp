#pragma once

// Skinned template (kinematic tree + surface mesh with ground-truth skinning
// weights), pose parameters, and differentiable forward kinematics.

#include "gsavatar/geometry.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gsavatar {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BoundingBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();

  Vec3 extent() const { return hi - lo; }
  /// Maps into [0,1]^3; `clamped` reports whether any axis left the box.
  Vec3 normalize(const Vec3& p, bool* clamped = nullptr) const;
  bool contains(const Vec3& p) const;
};

struct SurfaceSample {
  Vec3 position;
  std::uint32_t triangle = 0;
  Vec3 barycentric;
  std::vector<double> weights;  // interpolated ground-truth skinning weights
};

class SkinnedTemplate {
 public:
  SkinnedTemplate() = default;
  /// Validates the tree (exactly one root, no cycles) and the weights
  /// (rows sum to 1 within 1e-6). Throws TemplateError.
  SkinnedTemplate(std::vector<std::string> names, std::vector<int> parents,
                  std::vector<Vec3> rest_joints, std::vector<Vec3> vertices,
                  std::vector<std::array<std::uint32_t, 3>> triangles,
                  std::vector<std::vector<double>> weights, double bbox_padding = 0.1);

  std::size_t bone_count() const { return parents_.size(); }
  const std::vector<int>& parents() const { return parents_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Vec3>& rest_joints() const { return rest_joints_; }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<std::array<std::uint32_t, 3>>& triangles() const { return triangles_; }
  const std::vector<std::vector<double>>& weights() const { return weights_; }
  const std::vector<std::vector<int>>& children() const { return children_; }
  /// Joints ordered so that every parent precedes its children.
  const std::vector<int>& topological_order() const { return order_; }
  const BoundingBox& bbox() const { return bbox_; }
  double bbox_padding() const { return bbox_padding_; }

  double triangle_area(std::size_t t) const;
  double surface_area() const;

  /// Area-weighted uniform surface samples with barycentric weights.
  std::vector<SurfaceSample> sample_surface(std::size_t n, std::mt19937_64& rng) const;

  /// Unsigned distance from p to the mesh posed with `vertex_positions`
  /// (defaults to the rest mesh).
  double distance_to_surface(const Vec3& p) const;

  nlohmann::json to_json() const;
  static SkinnedTemplate from_json(const nlohmann::json& j);
  static SkinnedTemplate load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::vector<std::string> names_;
  std::vector<int> parents_;
  std::vector<Vec3> rest_joints_;
  std::vector<Vec3> vertices_;
  std::vector<std::array<std::uint32_t, 3>> triangles_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::vector<int>> children_;
  std::vector<int> order_;
  std::vector<double> cumulative_area_;
  BoundingBox bbox_;
  double bbox_padding_ = 0.1;
};

/// Closest distance between a point and a triangle.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Vertices of the template after ground-truth LBS with the given bones.
std::vector<Vec3> pose_vertices(const SkinnedTemplate& tmpl, const std::vector<Mat4>& bones);
double distance_to_mesh(const Vec3& p, const std::vector<Vec3>& vertices,
                        const std::vector<std::array<std::uint32_t, 3>>& triangles);

// ---------------------------------------------------------------------------
// Pose parameters and forward kinematics
// ---------------------------------------------------------------------------

struct PoseParams {
  Vec3 translation = Vec3::Zero();
  Quat global_rotation = Quat::identity();
  std::vector<Quat> local_rotations;  // one per joint
  double scale = 1.0;

  static PoseParams identity(std::size_t bones);
  /// Flat layout: translation(3) global(4) locals(4B) scale(1).
  static std::size_t flat_size(std::size_t bones) { return 8 + 4 * bones; }
  std::vector<double> flatten() const;
  static PoseParams unflatten(std::span<const double> flat, std::size_t bones);

  nlohmann::json to_json() const;
  static PoseParams from_json(const nlohmann::json& j);
};

struct PoseGrad {
  Vec3 translation = Vec3::Zero();
  Quat global_rotation{0, 0, 0, 0};
  std::vector<Quat> local_rotations;
  double scale = 0.0;

  explicit PoseGrad(std::size_t bones = 0) : local_rotations(bones, Quat{0, 0, 0, 0}) {}
  std::vector<double> flatten() const;
  PoseGrad& operator+=(const PoseGrad& o);
};

using BoneTransforms = std::vector<Mat4>;

struct FkCache {
  std::vector<Mat4> local;   // rotation of each joint about its rest position
  std::vector<Mat4> chain;   // composed parent chain in canonical space
  Mat4 global = Mat4::Identity();
};

/// B_b = Global * chain_b, chain_b = chain_parent * local_b. Identity pose
/// yields identity transforms for every joint.
BoneTransforms forward_kinematics(const SkinnedTemplate& tmpl, const PoseParams& pose,
                                  FkCache* cache = nullptr);
PoseGrad forward_kinematics_backward(const SkinnedTemplate& tmpl, const PoseParams& pose,
                                     const FkCache& cache, const std::vector<Mat4>& d_bones);

std::vector<PoseParams> load_motion(const std::string& path);
void save_motion(const std::string& path, const std::vector<PoseParams>& poses);

}  // namespace gsavatar
