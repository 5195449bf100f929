#include "gsavatar/rasterizer.hpp"
#include "render_oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace gsavatar;
using namespace gsavatar::test;

namespace {

Camera front_camera(int w = 32, int h = 32) {
  return Camera::look_at({0, 0, -3}, Vec3::Zero(), Vec3::UnitY(), w, h, 40.0);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Project, PinholeMeanAndCulling) {
  const Camera cam = front_camera();
  const Fragment f = project(Vec3(0.1, -0.2, 0.0), 0.01 * Mat3::Identity(), cam, {});
  ASSERT_TRUE(f.visible);
  const OracleSplat2d o = oracle_project(Vec3(0.1, -0.2, 0.0), 0.01 * Mat3::Identity(), cam, 0.3);
  EXPECT_NEAR(f.mean.x(), o.mx, 1e-12);
  EXPECT_NEAR(f.mean.y(), o.my, 1e-12);
  EXPECT_NEAR(f.depth, 3.0, 1e-12);
  EXPECT_FALSE(project(Vec3(0, 0, -5), Mat3::Identity(), cam, {}).visible);
  EXPECT_FALSE(project(Vec3(100, 0, 0), 1e-4 * Mat3::Identity(), cam, {}).visible);
}

TEST(Render, SingleSplatCenterPixel) {
  const Camera cam = front_camera(33, 33);
  SplatScene sc;
  sc.resize(1);
  sc.covariances[0] = 1e-3 * Mat3::Identity();
  sc.opacities[0] = 0.8;
  sc.colors[0] = Vec3(0.2, 0.4, 0.6);
  const Framebuffer fb = render(sc, cam);
  // the mean projects onto the center of pixel (16, 16)
  const std::size_t p = 16 * 33 + 16;
  EXPECT_NEAR(fb.opacity[p], 0.8, 1e-12);
  EXPECT_NEAR(fb.rgb[3 * p + 2], 0.48, 1e-12);
  EXPECT_EQ(fb.contributors[p], 1u);
}

TEST(Render, TwoFragmentsCompositeFrontToBack) {
  const Camera cam = front_camera(33, 33);
  SplatScene sc;
  sc.resize(2);
  sc.means[0] = Vec3(0, 0, 0.5);  // farther
  sc.means[1] = Vec3(0, 0, -0.5);
  for (int i = 0; i < 2; ++i) sc.covariances[i] = 1e-4 * Mat3::Identity();
  sc.opacities = {0.5, 0.25};
  sc.colors = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  RenderOptions opt;
  opt.background = Vec3(0, 0, 1);
  const Framebuffer fb = render(sc, cam, opt);
  const std::size_t p = 16 * 33 + 16;
  EXPECT_NEAR(fb.rgb[3 * p + 0], 0.75 * 0.5, 1e-12);
  EXPECT_NEAR(fb.rgb[3 * p + 1], 0.25, 1e-12);
  EXPECT_NEAR(fb.rgb[3 * p + 2], 0.75 * 0.5, 1e-12);
  EXPECT_NEAR(fb.opacity[p], 1.0 - 0.75 * 0.5, 1e-12);
}

TEST(Render, TiledMatchesOracle) {
  std::mt19937_64 rng(1);
  RenderOptions opt;
  opt.min_transmittance = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const SplatScene sc = random_scene(rng, 60);
    const Camera cam = front_camera(48, 40);
    const Framebuffer fb = render(sc, cam, opt);
    const OracleImage o = oracle_render(sc, cam, opt, 0.0);
    EXPECT_LT(max_abs_diff(fb.rgb, o.rgb), 1e-12);
    EXPECT_LT(max_abs_diff(fb.opacity, o.opacity), 1e-12);
  }
}

TEST(Render, EarlyTerminationMatchesOracleWithSameRule) {
  std::mt19937_64 rng(2);
  const RenderOptions opt;
  const SplatScene sc = random_scene(rng, 200, 0.3);
  const Camera cam = front_camera();
  const Framebuffer fb = render(sc, cam, opt);
  const OracleImage o = oracle_render(sc, cam, opt, opt.min_transmittance);
  EXPECT_LT(max_abs_diff(fb.rgb, o.rgb), 1e-12);
  // without the rule the remainder is bounded by the leftover transmittance
  const OracleImage full = oracle_render(sc, cam, opt, 0.0);
  EXPECT_LT(max_abs_diff(fb.opacity, full.opacity), opt.min_transmittance);
}

TEST(Render, OpacityStaysInUnitInterval) {
  std::mt19937_64 rng(3);
  SplatScene sc = random_scene(rng, 300, 0.2);
  for (double& a : sc.opacities) a = 0.999;
  const Framebuffer fb = render(sc, front_camera());
  for (double o : fb.opacity) {
    EXPECT_GE(o, 0.0);
    EXPECT_LE(o, 1.0);
  }
}

TEST(Render, InputOrderDoesNotMatter) {
  std::mt19937_64 rng(4);
  const SplatScene sc = random_scene(rng, 80);
  std::vector<std::size_t> perm(sc.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  SplatScene shuffled;
  shuffled.resize(sc.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.means[i] = sc.means[perm[i]];
    shuffled.covariances[i] = sc.covariances[perm[i]];
    shuffled.opacities[i] = sc.opacities[perm[i]];
    shuffled.colors[i] = sc.colors[perm[i]];
  }
  const Camera cam = front_camera();
  EXPECT_EQ(render(sc, cam).rgb, render(shuffled, cam).rgb);
}

TEST(Render, EmptySceneIsBackground) {
  SplatScene sc;
  RenderOptions opt;
  opt.background = Vec3(0.1, 0.2, 0.3);
  const Framebuffer fb = render(sc, front_camera(5, 3), opt);
  for (std::size_t p = 0; p < fb.pixels(); ++p) {
    EXPECT_EQ(fb.rgb[3 * p + 1], 0.2);
    EXPECT_EQ(fb.opacity[p], 0.0);
  }
}

TEST(RenderBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  SplatScene sc = random_scene(rng, 12, 0.3);
  const Camera cam = front_camera(24, 24);
  RenderOptions opt;
  opt.background = Vec3(0.3, 0.1, 0.7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> wr(3 * 24 * 24), wo(24 * 24);
  for (double& v : wr) v = n(rng);
  for (double& v : wo) v = n(rng);
  auto loss = [&] {
    const Framebuffer fb = render(sc, cam, opt);
    double s = 0;
    for (std::size_t i = 0; i < wr.size(); ++i) s += wr[i] * fb.rgb[i];
    for (std::size_t i = 0; i < wo.size(); ++i) s += wo[i] * fb.opacity[i];
    return s;
  };
  RenderCache cache;
  render(sc, cam, opt, &cache);
  const SplatGrad g = render_backward(sc, cache, wr, wo);
  double worst = 0;
  for (std::size_t i = 0; i < sc.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      worst = std::max(worst, rel_err(g.means[i][a], central_difference(loss, sc.means[i][a], 1e-7), 1e-6));
      worst = std::max(worst, rel_err(g.colors[i][a], central_difference(loss, sc.colors[i][a], 1e-6), 1e-6));
    }
    worst = std::max(worst, rel_err(g.opacities[i], central_difference(loss, sc.opacities[i], 1e-6), 1e-6));
    for (int r = 0; r < 3; ++r) {
      for (int c = r; c < 3; ++c) {
        // perturb symmetrically; the gradient of a symmetric entry pair is g_rc + g_cr
        auto sym = [&] { return loss(); };
        const double orig = sc.covariances[i](r, c);
        const double eps = 1e-8;
        sc.covariances[i](r, c) = sc.covariances[i](c, r) = orig + eps;
        const double up = sym();
        sc.covariances[i](r, c) = sc.covariances[i](c, r) = orig - eps;
        const double down = sym();
        sc.covariances[i](r, c) = sc.covariances[i](c, r) = orig;
        const double num = (up - down) / (2 * eps);
        const double ana = r == c ? g.covariances[i](r, c) : g.covariances[i](r, c) + g.covariances[i](c, r);
        worst = std::max(worst, rel_err(ana, num, 1e-4));
      }
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(RenderBackward, RequiresForwardCache) {
  SplatScene sc;
  sc.resize(1);
  RenderCache cache;
  std::vector<double> rgb(3), op(1);
  EXPECT_THROW(render_backward(sc, cache, rgb, op), RenderCacheError);
}

TEST(RawImage, RoundTrip) {
  const std::string path = (std::filesystem::temp_directory_path() / "gsavatar_test.raw").string();
  const std::vector<double> data{0.0, 0.25, -1.5, 3.0, 0.5, 1.0};
  save_raw(path, 2, 1, 3, data);
  int w = 0, h = 0, c = 0;
  EXPECT_EQ(load_raw(path, &w, &h, &c), data);
  EXPECT_EQ(w, 2);
  EXPECT_EQ(c, 3);
  std::filesystem::remove(path);
}
