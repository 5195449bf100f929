#include "gsavatar/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gsavatar {

Quat Quat::from_axis_angle(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    // first-order expansion keeps the map smooth at zero
    return Quat{1.0, 0.5 * axis_angle.x(), 0.5 * axis_angle.y(), 0.5 * axis_angle.z()}
        .normalized();
  }
  const double s = std::sin(0.5 * angle) / angle;
  return {std::cos(0.5 * angle), s * axis_angle.x(), s * axis_angle.y(), s * axis_angle.z()};
}

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw GeometryError("quaternion has zero or non-finite norm");
  }
  return {w / n, x / n, y / n, z / n};
}

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

std::pair<Quat, Quat> quat_mul_backward(const Quat& a, const Quat& b, const Quat& d) {
  Quat da{d.w * b.w + d.x * b.x + d.y * b.y + d.z * b.z,
          -d.w * b.x + d.x * b.w - d.y * b.z + d.z * b.y,
          -d.w * b.y + d.x * b.z + d.y * b.w - d.z * b.x,
          -d.w * b.z - d.x * b.y + d.y * b.x + d.z * b.w};
  Quat db{d.w * a.w + d.x * a.x + d.y * a.y + d.z * a.z,
          -d.w * a.x + d.x * a.w + d.y * a.z - d.z * a.y,
          -d.w * a.y - d.x * a.z + d.y * a.w + d.z * a.x,
          -d.w * a.z + d.x * a.y - d.y * a.x + d.z * a.w};
  return {da, db};
}

Quat normalize_backward(const Quat& q, const Quat& d_unit) {
  const double n = q.norm();
  const Vec4 u = q.as_vec() / n;
  const Vec4 g = d_unit.as_vec();
  return Quat::from_vec((g - u * u.dot(g)) / n);
}

Mat3 quat_to_rotmat(const Quat& q_raw) {
  const Quat q = q_raw.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quat quat_to_rotmat_backward(const Quat& q_raw, const Mat3& g) {
  const Quat q = q_raw.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  const Quat d_unit{
      2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
      2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
           z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2)),
      2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
           w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2)),
      2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
           y * g(1, 2) + x * g(2, 0) + y * g(2, 1))};
  return normalize_backward(q_raw, d_unit);
}

Vec3 quat_to_axis_angle(const Quat& q_raw) {
  Quat q = q_raw.normalized();
  if (q.w < 0) q = {-q.w, -q.x, -q.y, -q.z};
  const Vec3 v{q.x, q.y, q.z};
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q.w);
  return v * (angle / s);
}

Mat4 make_transform(const Mat3& rotation, const Vec3& translation) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Mat3 build_covariance(const Vec3& scale, const Quat& q) {
  if (!(scale.array() > 0.0).all()) {
    throw GeometryError("covariance scale must be strictly positive");
  }
  return covariance_from_linear(quat_to_rotmat(q), scale);
}

CovarianceGrad covariance_from_linear_backward(const Mat3& linear, const Vec3& scale,
                                               const Mat3& d_cov) {
  const Vec3 sq = scale.cwiseProduct(scale);
  CovarianceGrad g;
  g.d_linear = (d_cov + d_cov.transpose()) * linear * sq.asDiagonal();
  const Mat3 inner = linear.transpose() * d_cov * linear;
  g.d_scale = 2.0 * inner.diagonal().cwiseProduct(scale);
  return g;
}

Vec3 normalize_vec_backward(const Vec3& v, const Vec3& d_unit) {
  const double n = v.norm();
  const Vec3 u = v / n;
  return (d_unit - u * u.dot(d_unit)) / n;
}

namespace {

constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

}  // namespace

std::array<double, kShCoeffs> sh_basis3(const Vec3& dir) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  return {kShC0,
          -kShC1 * y,
          kShC1 * z,
          -kShC1 * x,
          kC2[0] * x * y,
          kC2[1] * y * z,
          kC2[2] * (2 * zz - xx - yy),
          kC2[3] * x * z,
          kC2[4] * (xx - yy),
          kC3[0] * y * (3 * xx - yy),
          kC3[1] * x * y * z,
          kC3[2] * y * (4 * zz - xx - yy),
          kC3[3] * z * (2 * zz - 3 * xx - 3 * yy),
          kC3[4] * x * (4 * zz - xx - yy),
          kC3[5] * z * (xx - yy),
          kC3[6] * x * (xx - 3 * yy)};
}

std::vector<double> sh_basis(const Vec3& dir, int degree) {
  if (degree < 0 || degree > kMaxShDegree) {
    throw GeometryError("spherical harmonics degree must be in [0, 3]");
  }
  if (std::abs(dir.norm() - 1.0) > 1e-6) {
    throw GeometryError("spherical harmonics direction must be unit length");
  }
  const auto full = sh_basis3(dir);
  const auto n = static_cast<std::size_t>((degree + 1) * (degree + 1));
  return {full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n)};
}

Vec3 sh_basis3_backward(const Vec3& dir, std::span<const double, kShCoeffs> g) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  Vec3 d = Vec3::Zero();
  auto add = [&](int i, double gx, double gy, double gz) { d += g[i] * Vec3{gx, gy, gz}; };
  add(1, 0, -kShC1, 0);
  add(2, 0, 0, kShC1);
  add(3, -kShC1, 0, 0);
  add(4, kC2[0] * y, kC2[0] * x, 0);
  add(5, 0, kC2[1] * z, kC2[1] * y);
  add(6, -2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z);
  add(7, kC2[3] * z, 0, kC2[3] * x);
  add(8, 2 * kC2[4] * x, -2 * kC2[4] * y, 0);
  add(9, 6 * kC3[0] * x * y, kC3[0] * (3 * xx - 3 * yy), 0);
  add(10, kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
  add(11, -2 * kC3[2] * x * y, kC3[2] * (4 * zz - xx - 3 * yy), 8 * kC3[2] * y * z);
  add(12, -6 * kC3[3] * x * z, -6 * kC3[3] * y * z, kC3[3] * (6 * zz - 3 * xx - 3 * yy));
  add(13, kC3[4] * (4 * zz - 3 * xx - yy), -2 * kC3[4] * x * y, 8 * kC3[4] * x * z);
  add(14, 2 * kC3[5] * x * z, -2 * kC3[5] * y * z, kC3[5] * (xx - yy));
  add(15, kC3[6] * (3 * xx - 3 * yy), -6 * kC3[6] * x * y, 0);
  return d;
}

// ---------------------------------------------------------------------------
// k-NN
// ---------------------------------------------------------------------------

namespace {

struct Candidate {
  double dist2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const {
    return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
  }
};

// Keeps the k best candidates in sorted order.
class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) { items_.reserve(k + 1); }
  void offer(Candidate c) {
    if (items_.size() == k_ && !(c < items_.back())) return;
    items_.insert(std::upper_bound(items_.begin(), items_.end(), c), c);
    if (items_.size() > k_) items_.pop_back();
  }
  bool full() const { return items_.size() == k_; }
  double worst() const { return items_.back().dist2; }
  const std::vector<Candidate>& items() const { return items_; }

 private:
  std::size_t k_;
  std::vector<Candidate> items_;
};

constexpr std::size_t kBruteForceBelow = 256;

void knn_brute(std::span<const Vec3> pts, std::size_t k, KnnGraph& out) {
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    BestK best(k);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      best.offer({(pts[i] - pts[j]).squaredNorm(), static_cast<std::uint32_t>(j)});
    }
    for (std::size_t m = 0; m < k; ++m) out.indices[i * k + m] = best.items()[m].index;
  }
}

void knn_grid(std::span<const Vec3> pts, std::size_t k, KnnGraph& out) {
  const std::size_t n = pts.size();
  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = (hi - lo).cwiseMax(1e-9);
  // roughly two points per occupied cell for surface-like clouds
  double cell = std::cbrt(extent.prod() / static_cast<double>(n)) * 1.5;
  cell = std::max(cell, extent.maxCoeff() / 256.0);
  std::array<long, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::max<long>(1, static_cast<long>(std::floor(extent[a] / cell)) + 1);
  }
  auto cell_of = [&](const Vec3& p) {
    std::array<long, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp<long>(static_cast<long>(std::floor((p[a] - lo[a]) / cell)), 0,
                              dims[a] - 1);
    }
    return c;
  };
  auto flat = [&](long x, long y, long z) {
    return static_cast<std::size_t>((z * dims[1] + y) * dims[0] + x);
  };
  const std::size_t n_cells = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  std::vector<std::uint32_t> start(n_cells + 1, 0);
  std::vector<std::uint32_t> order(n);
  std::vector<std::size_t> cell_index(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(pts[i]);
    cell_index[i] = flat(c[0], c[1], c[2]);
    ++start[cell_index[i] + 1];
  }
  std::partial_sum(start.begin(), start.end(), start.begin());
  {
    std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < n; ++i) order[fill[cell_index[i]]++] = static_cast<std::uint32_t>(i);
  }
  const long max_ring = std::max({dims[0], dims[1], dims[2]});

  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(pts[i]);
    BestK best(k);
    for (long r = 0; r <= max_ring; ++r) {
      for (long z = c[2] - r; z <= c[2] + r; ++z) {
        if (z < 0 || z >= dims[2]) continue;
        for (long y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= dims[1]) continue;
          for (long x = c[0] - r; x <= c[0] + r; ++x) {
            if (x < 0 || x >= dims[0]) continue;
            const long ring = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
            if (ring != r) continue;
            const std::size_t f = flat(x, y, z);
            for (std::uint32_t s = start[f]; s < start[f + 1]; ++s) {
              const std::uint32_t j = order[s];
              if (j == i) continue;
              best.offer({(pts[i] - pts[j]).squaredNorm(), j});
            }
          }
        }
      }
      // Anything outside rings 0..r is at least r*cell away.
      const double bound = static_cast<double>(r) * cell;
      if (best.full() && best.worst() < bound * bound) break;
    }
    for (std::size_t m = 0; m < k; ++m) out.indices[i * k + m] = best.items()[m].index;
  }
}

}  // namespace

KnnGraph knn_build(std::span<const Vec3> points, std::size_t k) {
  KnnGraph g;
  const std::size_t n = points.size();
  if (n < 2) return g;
  g.k = std::min(k, n - 1);
  g.indices.assign(n * g.k, 0);
  if (g.k == 0) return g;
  if (n < kBruteForceBelow) {
    knn_brute(points, g.k, g);
  } else {
    knn_grid(points, g.k, g);
  }
  return g;
}

}  // namespace gsavatar
