#pragma once

// Differentiable splat rasterizer: EWA projection, 16x16 tile binning,
// per-tile depth sort, front-to-back alpha blending of color and opacity,
// and the analytic backward pass. A naive per-pixel global-sort renderer is
// kept alongside as the reference.

#include "gsavatar/camera.hpp"
#include "gsavatar/geometry.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsavatar {

/// Observation-space splats ready to render.
struct SplatScene {
  std::vector<Vec3> means;
  std::vector<Mat3> covariances;
  std::vector<double> opacities;  // in (0,1)
  std::vector<Vec3> colors;

  std::size_t size() const { return means.size(); }
  void resize(std::size_t n);
};

struct RenderOptions {
  int tile_size = 16;
  double cov_floor = 0.3;       // px^2 added to the 2D covariance diagonal
  double cutoff_sigma = 3.0;    // kernel support in standard deviations
  double min_transmittance = 1e-4;  // stop once T drops below; 0 disables
  Vec3 background = Vec3::Zero();
};

using Mat23 = Eigen::Matrix<double, 2, 3>;

struct Fragment {
  bool visible = false;
  Vec3 view;        // camera-space mean
  Vec2 mean;        // pixel coordinates
  Mat2 cov;         // 2D covariance including the floor
  Vec3 conic;       // inverse covariance (a, b, c)
  Mat23 jacobian;   // d(pixel)/d(view)
  double depth = 0.0;
  double radius = 0.0;
  int tile_min[2] = {0, 0};
  int tile_max[2] = {-1, -1};  // inclusive
};

/// Projects one splat; returns an invisible fragment when culled (behind the
/// near plane, beyond far, degenerate 2D covariance, or fully off-screen).
Fragment project(const Vec3& mean, const Mat3& cov, const Camera& cam, const RenderOptions& opt);

struct Framebuffer {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;      // H x W x 3
  std::vector<double> opacity;  // H x W
  std::vector<std::uint32_t> contributors;
  std::vector<double> final_transmittance;

  void resize(int w, int h);
  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

struct RenderCache {
  bool valid = false;
  Camera camera;
  RenderOptions options;
  std::vector<Fragment> fragments;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<std::uint32_t>> tile_lists;  // sorted by (depth, index)
};

class RenderCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

Framebuffer render(const SplatScene& scene, const Camera& cam, const RenderOptions& opt = {},
                   RenderCache* cache = nullptr);

/// Reference renderer: every pixel blends every visible fragment in global
/// (depth, index) order with no tiling and no early termination.
Framebuffer render_reference(const SplatScene& scene, const Camera& cam, const RenderOptions& opt = {});

struct SplatGrad {
  std::vector<Vec3> means;
  std::vector<Mat3> covariances;
  std::vector<double> opacities;
  std::vector<Vec3> colors;
  /// |dL/d(2D mean)| in normalized device units, for densification.
  std::vector<double> view_grad_norm;
  std::vector<unsigned char> visible;
};

SplatGrad render_backward(const SplatScene& scene, const RenderCache& cache, std::span<const double> d_rgb,
                          std::span<const double> d_opacity);

/// Planar float dump: "GSRAW1\n", int32 width, height, channels, then
/// float32 values row-major with interleaved channels.
void save_raw(const std::string& path, int width, int height, int channels, std::span<const double> data);
std::vector<double> load_raw(const std::string& path, int* width, int* height, int* channels);

}  // namespace gsavatar
