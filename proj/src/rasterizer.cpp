#include "gsavatar/rasterizer.hpp"

#include "gsavatar/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace gsavatar {

void SplatScene::resize(std::size_t n) {
  means.resize(n, Vec3::Zero());
  covariances.resize(n, Mat3::Identity());
  opacities.resize(n, 0.0);
  colors.resize(n, Vec3::Zero());
}

void Framebuffer::resize(int w, int h) {
  width = w;
  height = h;
  const std::size_t n = pixels();
  rgb.assign(3 * n, 0.0);
  opacity.assign(n, 0.0);
  contributors.assign(n, 0);
  final_transmittance.assign(n, 1.0);
}

Fragment project(const Vec3& mean, const Mat3& cov, const Camera& cam, const RenderOptions& opt) {
  Fragment f;
  const Mat3 rw = cam.rotation();
  const Vec3 t = rw * mean + cam.translation();
  f.view = t;
  f.depth = t.z();
  if (!(t.z() > cam.near) || t.z() > cam.far) return f;
  const double iz = 1.0 / t.z();
  f.mean = {cam.fx * t.x() * iz + cam.cx, cam.fy * t.y() * iz + cam.cy};
  f.jacobian << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
  const Mat23 m = f.jacobian * rw;
  f.cov = m * cov * m.transpose();
  f.cov(0, 0) += opt.cov_floor;
  f.cov(1, 1) += opt.cov_floor;
  const double a = f.cov(0, 0), b = 0.5 * (f.cov(0, 1) + f.cov(1, 0)), c = f.cov(1, 1);
  const double det = a * c - b * b;
  if (!(det > 1e-12)) return f;
  f.conic = {c / det, -b / det, a / det};
  const double mid = 0.5 * (a + c);
  const double lambda = mid + std::sqrt(std::max(0.0, mid * mid - det));
  f.radius = std::ceil(opt.cutoff_sigma * std::sqrt(lambda));
  const double x0 = f.mean.x() - f.radius, x1 = f.mean.x() + f.radius;
  const double y0 = f.mean.y() - f.radius, y1 = f.mean.y() + f.radius;
  if (x1 < 0.0 || y1 < 0.0 || x0 > cam.width || y0 > cam.height) return f;
  const int ts = opt.tile_size;
  const int tx = (cam.width + ts - 1) / ts, ty = (cam.height + ts - 1) / ts;
  // tiles whose pixel centers can fall inside [x0, x1] x [y0, y1]
  f.tile_min[0] = std::clamp(static_cast<int>(std::floor((x0 - 0.5) / ts)), 0, tx - 1);
  f.tile_max[0] = std::clamp(static_cast<int>(std::floor((x1 - 0.5) / ts)), 0, tx - 1);
  f.tile_min[1] = std::clamp(static_cast<int>(std::floor((y0 - 0.5) / ts)), 0, ty - 1);
  f.tile_max[1] = std::clamp(static_cast<int>(std::floor((y1 - 0.5) / ts)), 0, ty - 1);
  f.visible = true;
  return f;
}

namespace {

// Kernel weight at a pixel center; returns false outside the cutoff.
inline bool kernel(const Fragment& f, double px, double py, double cutoff2, double* power, Vec2* delta) {
  const double dx = px - f.mean.x(), dy = py - f.mean.y();
  const double p = 0.5 * (f.conic[0] * dx * dx + 2.0 * f.conic[1] * dx * dy + f.conic[2] * dy * dy);
  if (!(2.0 * p <= cutoff2)) return false;
  *power = p;
  *delta = {dx, dy};
  return true;
}

bool depth_less(const std::vector<Fragment>& frags, std::uint32_t a, std::uint32_t b) {
  if (frags[a].depth != frags[b].depth) return frags[a].depth < frags[b].depth;
  return a < b;
}

}  // namespace

Framebuffer render(const SplatScene& scene, const Camera& cam, const RenderOptions& opt, RenderCache* cache) {
  RenderCache local;
  RenderCache& rc = cache ? *cache : local;
  rc.valid = false;
  rc.camera = cam;
  rc.options = opt;
  const std::size_t n = scene.size();
  rc.fragments.resize(n);
  for (std::size_t i = 0; i < n; ++i) rc.fragments[i] = project(scene.means[i], scene.covariances[i], cam, opt);

  const int ts = opt.tile_size;
  rc.tiles_x = (cam.width + ts - 1) / ts;
  rc.tiles_y = (cam.height + ts - 1) / ts;
  rc.tile_lists.assign(static_cast<std::size_t>(rc.tiles_x * rc.tiles_y), {});
  for (std::size_t i = 0; i < n; ++i) {
    const Fragment& f = rc.fragments[i];
    if (!f.visible) continue;
    for (int y = f.tile_min[1]; y <= f.tile_max[1]; ++y) {
      for (int x = f.tile_min[0]; x <= f.tile_max[0]; ++x) {
        rc.tile_lists[static_cast<std::size_t>(y * rc.tiles_x + x)].push_back(static_cast<std::uint32_t>(i));
      }
    }
  }
  const auto& frags = rc.fragments;
  for (auto& list : rc.tile_lists) {
    std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) { return depth_less(frags, a, b); });
  }

  Framebuffer fb;
  fb.resize(cam.width, cam.height);
  const double cutoff2 = opt.cutoff_sigma * opt.cutoff_sigma;
  parallel_for(rc.tile_lists.size(), [&](std::size_t tile) {
    const int tx = static_cast<int>(tile) % rc.tiles_x, ty = static_cast<int>(tile) / rc.tiles_x;
    const auto& list = rc.tile_lists[tile];
    for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
        const std::size_t pix = static_cast<std::size_t>(py) * static_cast<std::size_t>(cam.width) +
                                static_cast<std::size_t>(px);
        double t = 1.0;
        Vec3 c = Vec3::Zero();
        double o = 0.0;
        std::uint32_t count = 0;
        for (std::uint32_t idx : list) {
          double power;
          Vec2 delta;
          if (!kernel(frags[idx], px + 0.5, py + 0.5, cutoff2, &power, &delta)) continue;
          const double a = scene.opacities[idx] * std::exp(-power);
          c += t * a * scene.colors[idx];
          o += t * a;
          t *= 1.0 - a;
          ++count;
          if (t < opt.min_transmittance) break;
        }
        c += t * opt.background;
        for (int k = 0; k < 3; ++k) fb.rgb[3 * pix + static_cast<std::size_t>(k)] = c[k];
        fb.opacity[pix] = o;
        fb.contributors[pix] = count;
        fb.final_transmittance[pix] = t;
      }
    }
  });
  rc.valid = true;
  return fb;
}

Framebuffer render_reference(const SplatScene& scene, const Camera& cam, const RenderOptions& opt) {
  const std::size_t n = scene.size();
  std::vector<Fragment> frags(n);
  for (std::size_t i = 0; i < n; ++i) frags[i] = project(scene.means[i], scene.covariances[i], cam, opt);
  std::vector<std::uint32_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (frags[i].visible) order.push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return depth_less(frags, a, b); });
  Framebuffer fb;
  fb.resize(cam.width, cam.height);
  const double cutoff2 = opt.cutoff_sigma * opt.cutoff_sigma;
  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      const std::size_t pix = static_cast<std::size_t>(py) * static_cast<std::size_t>(cam.width) +
                              static_cast<std::size_t>(px);
      double t = 1.0;
      Vec3 c = Vec3::Zero();
      double o = 0.0;
      std::uint32_t count = 0;
      for (std::uint32_t idx : order) {
        double power;
        Vec2 delta;
        if (!kernel(frags[idx], px + 0.5, py + 0.5, cutoff2, &power, &delta)) continue;
        const double a = scene.opacities[idx] * std::exp(-power);
        c += t * a * scene.colors[idx];
        o += t * a;
        t *= 1.0 - a;
        ++count;
      }
      c += t * opt.background;
      for (int k = 0; k < 3; ++k) fb.rgb[3 * pix + static_cast<std::size_t>(k)] = c[k];
      fb.opacity[pix] = o;
      fb.contributors[pix] = count;
      fb.final_transmittance[pix] = t;
    }
  }
  return fb;
}

namespace {

struct LocalGrad {
  Vec2 mean = Vec2::Zero();
  Vec3 conic = Vec3::Zero();
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
};

struct Step {
  std::uint32_t slot;
  double alpha;
  double weight;  // exp(-power)
  double t;       // transmittance before this splat
  Vec2 delta;
};

}  // namespace

SplatGrad render_backward(const SplatScene& scene, const RenderCache& cache, std::span<const double> d_rgb,
                          std::span<const double> d_opacity) {
  if (!cache.valid) throw RenderCacheError("render_backward called without a forward cache");
  const Camera& cam = cache.camera;
  const RenderOptions& opt = cache.options;
  const std::size_t n = scene.size();
  if (cache.fragments.size() != n) throw RenderCacheError("render cache does not match the scene");
  const std::size_t npix = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  if (d_rgb.size() != 3 * npix || d_opacity.size() != npix) {
    throw std::invalid_argument("upstream gradient size does not match the image");
  }
  const auto& frags = cache.fragments;
  const int ts = opt.tile_size;
  const double cutoff2 = opt.cutoff_sigma * opt.cutoff_sigma;

  // per-tile partial sums, reduced below in tile order
  std::vector<std::vector<LocalGrad>> partial(cache.tile_lists.size());
  parallel_for(cache.tile_lists.size(), [&](std::size_t tile) {
    const auto& list = cache.tile_lists[tile];
    auto& acc = partial[tile];
    acc.assign(list.size(), LocalGrad{});
    if (list.empty()) return;
    const int tx = static_cast<int>(tile) % cache.tiles_x, ty = static_cast<int>(tile) / cache.tiles_x;
    std::vector<Step> steps;
    for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
        const std::size_t pix = static_cast<std::size_t>(py) * static_cast<std::size_t>(cam.width) +
                                static_cast<std::size_t>(px);
        const Vec3 gc{d_rgb[3 * pix], d_rgb[3 * pix + 1], d_rgb[3 * pix + 2]};
        const double go = d_opacity[pix];
        if (gc.isZero(0.0) && go == 0.0) continue;
        steps.clear();
        double t = 1.0;
        for (std::uint32_t s = 0; s < list.size(); ++s) {
          const std::uint32_t idx = list[s];
          double power;
          Vec2 delta;
          if (!kernel(frags[idx], px + 0.5, py + 0.5, cutoff2, &power, &delta)) continue;
          const double w = std::exp(-power);
          const double a = scene.opacities[idx] * w;
          steps.push_back({s, a, w, t, delta});
          t *= 1.0 - a;
          if (t < opt.min_transmittance) break;
        }
        // suffixes of the blend normalized by the transmittance after each step
        Vec3 back_c = opt.background;
        double back_o = 0.0;
        for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
          const std::uint32_t idx = list[it->slot];
          LocalGrad& g = acc[it->slot];
          const Vec3& col = scene.colors[idx];
          g.color += it->t * it->alpha * gc;
          const double d_alpha = it->t * (gc.dot(col - back_c) + go * (1.0 - back_o));
          back_c = it->alpha * col + (1.0 - it->alpha) * back_c;
          back_o = it->alpha + (1.0 - it->alpha) * back_o;
          g.opacity += d_alpha * it->weight;
          const double d_power = -d_alpha * it->alpha;
          const Vec3& k = frags[idx].conic;
          const double dx = it->delta.x(), dy = it->delta.y();
          // delta = pixel - mean
          g.mean.x() -= d_power * (k[0] * dx + k[1] * dy);
          g.mean.y() -= d_power * (k[1] * dx + k[2] * dy);
          g.conic += d_power * Vec3(0.5 * dx * dx, dx * dy, 0.5 * dy * dy);
        }
      }
    }
  });

  std::vector<LocalGrad> total(n);
  for (std::size_t tile = 0; tile < cache.tile_lists.size(); ++tile) {
    const auto& list = cache.tile_lists[tile];
    for (std::size_t s = 0; s < list.size(); ++s) {
      LocalGrad& dst = total[list[s]];
      const LocalGrad& src = partial[tile][s];
      dst.mean += src.mean;
      dst.conic += src.conic;
      dst.opacity += src.opacity;
      dst.color += src.color;
    }
  }

  SplatGrad out;
  out.means.assign(n, Vec3::Zero());
  out.covariances.assign(n, Mat3::Zero());
  out.opacities.assign(n, 0.0);
  out.colors.assign(n, Vec3::Zero());
  out.view_grad_norm.assign(n, 0.0);
  out.visible.assign(n, 0);
  const Mat3 rw = cam.rotation();
  for (std::size_t i = 0; i < n; ++i) {
    const Fragment& f = frags[i];
    if (!f.visible) continue;
    out.visible[i] = 1;
    const LocalGrad& g = total[i];
    out.opacities[i] = g.opacity;
    out.colors[i] = g.color;
    out.view_grad_norm[i] = Vec2(g.mean.x() * 0.5 * cam.width, g.mean.y() * 0.5 * cam.height).norm();

    // conic -> 2D covariance: dS = -K G K with G the symmetric gradient
    const Mat2 k{{f.conic[0], f.conic[1]}, {f.conic[1], f.conic[2]}};
    const Mat2 gk{{g.conic[0], 0.5 * g.conic[1]}, {0.5 * g.conic[1], g.conic[2]}};
    const Mat2 d_cov2 = -k * gk * k;

    // 2D covariance -> 3D covariance and projection Jacobian
    const Mat23 m = f.jacobian * rw;
    out.covariances[i] = m.transpose() * d_cov2 * m;
    const Mat23 d_m = 2.0 * d_cov2 * m * scene.covariances[i];
    const Mat23 d_j = d_m * rw.transpose();

    const Vec3& t = f.view;
    const double iz = 1.0 / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 d_view;
    d_view.x() = g.mean.x() * cam.fx * iz + d_j(0, 2) * (-cam.fx * iz2);
    d_view.y() = g.mean.y() * cam.fy * iz + d_j(1, 2) * (-cam.fy * iz2);
    d_view.z() = -g.mean.x() * cam.fx * t.x() * iz2 - g.mean.y() * cam.fy * t.y() * iz2 +
                 d_j(0, 0) * (-cam.fx * iz2) + d_j(0, 2) * (2.0 * cam.fx * t.x() * iz3) +
                 d_j(1, 1) * (-cam.fy * iz2) + d_j(1, 2) * (2.0 * cam.fy * t.y() * iz3);
    out.means[i] = rw.transpose() * d_view;
  }
  return out;
}

void save_raw(const std::string& path, int width, int height, int channels, std::span<const double> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "GSRAW1\n";
  const std::int32_t dims[3] = {width, height, channels};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  std::vector<float> buf(data.begin(), data.end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<double> load_raw(const std::string& path, int* width, int* height, int* channels) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  if (!in || !std::getline(in, magic) || magic != "GSRAW1") throw std::runtime_error("not a GSRAW1 file: " + path);
  std::int32_t dims[3];
  if (!in.read(reinterpret_cast<char*>(dims), sizeof dims)) throw std::runtime_error("truncated header: " + path);
  const std::size_t n = static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                        static_cast<std::size_t>(dims[2]);
  std::vector<float> buf(n);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw std::runtime_error("truncated data: " + path);
  }
  *width = dims[0];
  *height = dims[1];
  *channels = dims[2];
  return {buf.begin(), buf.end()};
}

}  // namespace gsavatar
