#pragma once

// Rotation/transform algebra, covariance construction, the real spherical
// harmonics basis, and exact k-nearest-neighbour queries.
//
// Every differentiable primitive comes with a *_backward companion that maps
// an upstream gradient onto the primitive's inputs. Backward functions never
// accumulate; callers add the returned values into their own slots.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace gsavatar {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation quaternion (w, x, y, z). Stored unnormalized when it is a
/// learnable parameter; every consumer normalizes on use.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static constexpr Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }
  static Quat from_axis_angle(const Vec3& axis_angle);

  double norm() const;
  Quat normalized() const;
  Vec4 as_vec() const { return {w, x, y, z}; }
  static Quat from_vec(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

  bool operator==(const Quat&) const = default;
};

/// Thrown for inputs that make a geometric operation undefined
/// (zero-norm quaternion, non-positive scale, unsupported SH degree).
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Hamilton product. quat_to_rotmat(a*b) == quat_to_rotmat(a)*quat_to_rotmat(b).
Quat quat_mul(const Quat& a, const Quat& b);
std::pair<Quat, Quat> quat_mul_backward(const Quat& a, const Quat& b, const Quat& d_out);

/// Gradient of q/|q| mapped back onto q.
Quat normalize_backward(const Quat& q, const Quat& d_unit);

/// Rotation matrix of q/|q|. Throws GeometryError on a zero quaternion.
Mat3 quat_to_rotmat(const Quat& q);
/// d(loss)/dq for the unnormalized q given d(loss)/dR.
Quat quat_to_rotmat_backward(const Quat& q, const Mat3& d_rot);

/// Inverse map of a rotation-matrix log; used for noise measurements.
Vec3 quat_to_axis_angle(const Quat& q);

/// Homogeneous 4x4 from rotation and translation.
Mat4 make_transform(const Mat3& rotation, const Vec3& translation);
inline Vec3 transform_point(const Mat4& m, const Vec3& p) {
  return m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>();
}

/// Sigma = R S S^T R^T with S = diag(scale). Throws on non-positive scale.
Mat3 build_covariance(const Vec3& scale, const Quat& q);

/// Covariance from an arbitrary (possibly non-orthonormal) linear block.
inline Mat3 covariance_from_linear(const Mat3& linear, const Vec3& scale) {
  const Vec3 sq = scale.cwiseProduct(scale);
  return linear * sq.asDiagonal() * linear.transpose();
}
struct CovarianceGrad {
  Mat3 d_linear;
  Vec3 d_scale;
};
CovarianceGrad covariance_from_linear_backward(const Mat3& linear, const Vec3& scale,
                                               const Mat3& d_cov);

// ---------------------------------------------------------------------------
// Real spherical harmonics up to degree 3.
//
//  index  band  function (unit direction x, y, z)
//  0      0     C0
//  1      1     -C1 y
//  2      1      C1 z
//  3      1     -C1 x
//  4      2      C2_0 x y
//  5      2      C2_1 y z
//  6      2      C2_2 (2z^2 - x^2 - y^2)
//  7      2      C2_3 x z
//  8      2      C2_4 (x^2 - y^2)
//  9      3      C3_0 y (3x^2 - y^2)
//  10     3      C3_1 x y z
//  11     3      C3_2 y (4z^2 - x^2 - y^2)
//  12     3      C3_3 z (2z^2 - 3x^2 - 3y^2)
//  13     3      C3_4 x (4z^2 - x^2 - y^2)
//  14     3      C3_5 z (x^2 - y^2)
//  15     3      C3_6 x (x^2 - 3y^2)
// ---------------------------------------------------------------------------
inline constexpr int kMaxShDegree = 3;
inline constexpr int kShCoeffs = 16;
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Returns (degree+1)^2 basis values. |dir| must be 1 within 1e-6.
std::vector<double> sh_basis(const Vec3& dir, int degree);
/// Degree-3 basis into a fixed array (hot path).
std::array<double, kShCoeffs> sh_basis3(const Vec3& dir);
/// Gradient wrt the direction of sum_i d_basis[i] * Y_i(dir), treating the
/// basis as a polynomial in (x, y, z).
Vec3 sh_basis3_backward(const Vec3& dir, std::span<const double, kShCoeffs> d_basis);

/// v/|v| and its backward.
Vec3 normalize_vec_backward(const Vec3& v, const Vec3& d_unit);

// ---------------------------------------------------------------------------
// k-nearest neighbours
// ---------------------------------------------------------------------------

/// Flat neighbour lists: neighbours of point i are
/// indices[i*k_eff .. (i+1)*k_eff), ordered by (distance, index).
struct KnnGraph {
  std::size_t k = 0;  // effective neighbours per point, min(k_requested, N-1)
  std::vector<std::uint32_t> indices;

  std::size_t size() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {indices.data() + i * k, k};
  }
};

inline constexpr std::size_t kDefaultKnn = 5;

/// Exact k-NN; matches exhaustive search including tie order.
KnnGraph knn_build(std::span<const Vec3> points, std::size_t k = kDefaultKnn);

}  // namespace gsavatar
