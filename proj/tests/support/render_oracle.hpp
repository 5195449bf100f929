#pragma once

// Brute-force splat renderer used as a test oracle. It shares no code with
// the library rasterizer: every pixel walks all splats in global depth order.

#include "gsavatar/camera.hpp"
#include "gsavatar/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace gsavatar::test {

struct OracleImage {
  std::vector<double> rgb;
  std::vector<double> opacity;
};

struct OracleSplat2d {
  double depth = 0.0;
  double mx = 0.0, my = 0.0;
  double ia = 0.0, ib = 0.0, ic = 0.0;  // inverse 2D covariance
  bool ok = false;
};

inline OracleSplat2d oracle_project(const Vec3& mean, const Mat3& cov, const Camera& cam, double floor) {
  OracleSplat2d s;
  const Vec3 v = cam.world_to_camera.topLeftCorner<3, 3>() * mean + cam.world_to_camera.topRightCorner<3, 1>();
  if (v.z() <= cam.near || v.z() > cam.far) return s;
  s.depth = v.z();
  s.mx = cam.fx * v.x() / v.z() + cam.cx;
  s.my = cam.fy * v.y() / v.z() + cam.cy;
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx / v.z(), 0, -cam.fx * v.x() / (v.z() * v.z()), 0, cam.fy / v.z(), -cam.fy * v.y() / (v.z() * v.z());
  const Eigen::Matrix<double, 2, 3> m = j * cam.world_to_camera.topLeftCorner<3, 3>();
  Mat2 c = m * cov * m.transpose();
  c(0, 0) += floor;
  c(1, 1) += floor;
  const double b = 0.5 * (c(0, 1) + c(1, 0));
  const double det = c(0, 0) * c(1, 1) - b * b;
  if (det <= 1e-12) return s;
  s.ia = c(1, 1) / det;
  s.ib = -b / det;
  s.ic = c(0, 0) / det;
  s.ok = true;
  return s;
}

/// `stop_below` > 0 ends a pixel's blend after the splat that takes the
/// transmittance below it.
inline OracleImage oracle_render(const SplatScene& scene, const Camera& cam, const RenderOptions& opt,
                                 double stop_below) {
  const std::size_t n = scene.size();
  std::vector<OracleSplat2d> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = oracle_project(scene.means[i], scene.covariances[i], cam, opt.cov_floor);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a].depth < s[b].depth; });
  OracleImage img;
  img.rgb.assign(3 * static_cast<std::size_t>(cam.width * cam.height), 0.0);
  img.opacity.assign(static_cast<std::size_t>(cam.width * cam.height), 0.0);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double t = 1.0, o = 0.0;
      Vec3 c = Vec3::Zero();
      for (std::size_t i : order) {
        if (!s[i].ok) continue;
        const double dx = x + 0.5 - s[i].mx, dy = y + 0.5 - s[i].my;
        const double m2 = s[i].ia * dx * dx + 2 * s[i].ib * dx * dy + s[i].ic * dy * dy;
        if (m2 > opt.cutoff_sigma * opt.cutoff_sigma) continue;
        const double a = scene.opacities[i] * std::exp(-0.5 * m2);
        c += t * a * scene.colors[i];
        o += t * a;
        t *= 1 - a;
        if (stop_below > 0 && t < stop_below) break;
      }
      c += t * opt.background;
      const std::size_t p = static_cast<std::size_t>(y * cam.width + x);
      for (int k = 0; k < 3; ++k) img.rgb[3 * p + static_cast<std::size_t>(k)] = c[k];
      img.opacity[p] = o;
    }
  }
  return img;
}

/// Random scene of up to `n` splats in front of a camera looking at the origin.
inline SplatScene random_scene(std::mt19937_64& rng, std::size_t n, double spread = 0.6) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  SplatScene sc;
  sc.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sc.means[i] = Vec3(u(rng), u(rng), u(rng)) * spread;
    Mat3 a;
    for (int k = 0; k < 9; ++k) a.data()[k] = u(rng);
    sc.covariances[i] = 0.01 * a * a.transpose() + 1e-4 * Mat3::Identity();
    sc.opacities[i] = 0.05 + 0.9 * u01(rng);
    sc.colors[i] = Vec3(u01(rng), u01(rng), u01(rng));
  }
  return sc;
}

}  // namespace gsavatar::test
