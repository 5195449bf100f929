#include "gsavatar/gaussians.hpp"
#include "gsavatar/rasterizer.hpp"
#include "gsavatar/skeleton.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace gsavatar;

namespace {

SkinnedTemplate unit_square() {
  return SkinnedTemplate({"root"}, {-1}, {Vec3::Zero()}, {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}},
                         {{{0, 1, 2}}, {{0, 2, 3}}}, {{1.0}, {1.0}, {1.0}, {1.0}});
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gsavatar_test_" + name)).string();
}

GaussianSet random_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  GaussianSet s;
  s.resize(n);
  for (auto* t : s.tensors()) {
    for (double& v : t->value) v = g(rng);
  }
  s.rebuild_knn(5);
  return s;
}

}  // namespace

TEST(InitFromTemplate, PlanarTemplateStaysInSquare) {
  const GaussianSet s = init_from_template(unit_square(), 100, 1);
  ASSERT_EQ(s.size(), 100u);
  ASSERT_TRUE(s.consistent());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Vec3 p = s.position(i);
    EXPECT_GE(p.x(), 0.0);
    EXPECT_LE(p.x(), 1.0);
    EXPECT_GE(p.y(), 0.0);
    EXPECT_LE(p.y(), 1.0);
    EXPECT_EQ(p.z(), 0.0);
    EXPECT_NEAR(s.opacity(i), 0.1, 1e-15);
    EXPECT_EQ(s.rotation(i), Quat::identity());
    EXPECT_EQ(s.log_scales(i, 0), s.log_scales(i, 1));
    EXPECT_EQ(s.log_scales(i, 0), s.log_scales(i, 2));
    for (double f : s.features.row(i)) EXPECT_EQ(f, 0.0);
  }
}

TEST(InitFromTemplate, ScaleIsMeanNearestNeighbourDistance) {
  const GaussianSet s = init_from_template(unit_square(), 200, 2);
  const auto pts = s.position_list();
  double mean = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) best = std::min(best, (pts[i] - pts[j]).norm());
    }
    mean += best;
  }
  mean /= static_cast<double>(pts.size());
  EXPECT_NEAR(std::exp(s.log_scales(0, 0)), mean, 1e-12);
}

TEST(InitFromTemplate, FiftyThousandSamples) {
  const GaussianSet s = init_from_template(unit_square(), 50000, 3);
  EXPECT_EQ(s.size(), 50000u);
}

TEST(InitFromTemplate, EmptyTemplateThrows) {
  const SkinnedTemplate empty({"root"}, {-1}, {Vec3::Zero()}, {}, {}, {});
  EXPECT_THROW(init_from_template(empty, 10, 0), TemplateError);
}

TEST(InitFromTemplate, AreaWeightedSampling) {
  // triangle 0 has area 0.5, triangle 1 has area 2
  const SkinnedTemplate t({"root"}, {-1}, {Vec3::Zero()}, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {3, 0, 0}, {0, 2, 0}},
                          {{{0, 1, 2}}, {{1, 3, 4}}}, {{1.0}, {1.0}, {1.0}, {1.0}, {1.0}});
  ASSERT_NEAR(t.triangle_area(1) / t.triangle_area(0), 4.0, 1e-12);
  std::mt19937_64 rng(4);
  const auto samples = t.sample_surface(100000, rng);
  double c0 = 0, c1 = 0;
  for (const auto& s : samples) (s.triangle == 0 ? c0 : c1) += 1;
  EXPECT_NEAR(c1 / c0, 4.0, 0.15);
}

TEST(Densify, ZeroStatsOnlyPrunes) {
  GaussianSet s = random_set(20, 5);
  s.opacity_logits(3, 0) = logit(0.001);
  s.opacity_logits(7, 0) = logit(0.5);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != 3) s.opacity_logits(i, 0) = std::max(s.opacity_logits(i, 0), logit(0.01));
  }
  const GaussianSet before = s;
  DensifyStats stats;
  stats.reset(s.size());
  std::mt19937_64 rng(0);
  const DensifyResult r = densify_and_prune(s, stats, DensifyConfig{}, rng);
  EXPECT_EQ(r.cloned, 0u);
  EXPECT_EQ(r.split, 0u);
  EXPECT_EQ(r.pruned, 1u);
  ASSERT_EQ(s.size(), 19u);
  for (std::size_t i = 0, j = 0; i < before.size(); ++i) {
    if (i == 3) continue;
    EXPECT_EQ(r.source[j], static_cast<long>(i));
    EXPECT_EQ(s.position(j), before.position(i));
    ++j;
  }
  EXPECT_EQ(s.knn.size(), s.size());
}

TEST(Densify, SplitChildrenScaledAndInsideParent) {
  const double sigma = 0.5;
  std::size_t inside = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    GaussianSet s;
    s.resize(1);
    for (int a = 0; a < 3; ++a) s.log_scales(0, a) = std::log(sigma);
    s.rotations(0, 0) = 1.0;
    s.opacity_logits(0, 0) = 0.0;
    DensifyStats stats;
    stats.reset(1);
    stats.add(0, 1.0);
    DensifyConfig cfg;
    cfg.scene_extent = 1.0;  // 0.5 > percent_dense * extent, so split
    std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
    const DensifyResult r = densify_and_prune(s, stats, cfg, rng);
    ASSERT_EQ(r.split, 1u);
    ASSERT_EQ(s.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(r.source[i], -1);
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(std::exp(s.log_scales(i, a)), sigma / 1.6, 1e-12);
      ++total;
      inside += s.position(i).norm() <= 3.0 * std::sqrt(3.0) * sigma;
    }
  }
  EXPECT_GE(static_cast<double>(inside) / static_cast<double>(total), 0.99);
}

TEST(Densify, CloneKeepsParameters) {
  GaussianSet s;
  s.resize(1);
  for (int a = 0; a < 3; ++a) s.log_scales(0, a) = std::log(1e-3);
  s.rotations(0, 0) = 1.0;
  s.opacity_logits(0, 0) = logit(0.6);
  DensifyStats stats;
  stats.reset(1);
  stats.add(0, 1.0);
  std::mt19937_64 rng(0);
  const DensifyResult r = densify_and_prune(s, stats, DensifyConfig{}, rng);
  ASSERT_EQ(r.cloned, 1u);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(r.source[0], 0);
  EXPECT_EQ(r.source[1], -1);
  EXPECT_EQ(s.position(0), s.position(1));
  // two stacked copies reproduce the original opacity
  const double a = s.opacity(0);
  EXPECT_NEAR(1.0 - (1.0 - a) * (1.0 - s.opacity(1)), 0.6, 1e-12);
}

TEST(Densify, CloneRendersCloseToOriginal) {
  GaussianSet s;
  s.resize(1);
  for (int a = 0; a < 3; ++a) s.log_scales(0, a) = std::log(0.05);
  s.rotations(0, 0) = 1.0;
  s.opacity_logits(0, 0) = logit(0.7);
  Camera cam = Camera::look_at({0, 0, -2}, Vec3::Zero(), Vec3::UnitY(), 32, 32, 40.0);
  auto render_set = [&](const GaussianSet& g) {
    SplatScene sc;
    sc.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      sc.means[i] = g.position(i);
      sc.covariances[i] = build_covariance(g.scale(i), g.rotation(i));
      sc.opacities[i] = g.opacity(i);
      sc.colors[i] = Vec3(0.9, 0.4, 0.2);
    }
    return render(sc, cam);
  };
  const Framebuffer before = render_set(s);
  DensifyStats stats;
  stats.reset(1);
  stats.add(0, 1.0);
  DensifyConfig cfg;
  cfg.scene_extent = 100.0;
  std::mt19937_64 rng(0);
  ASSERT_EQ(densify_and_prune(s, stats, cfg, rng).cloned, 1u);
  const Framebuffer after = render_set(s);
  for (std::size_t k = 0; k < before.rgb.size(); ++k) EXPECT_NEAR(before.rgb[k], after.rgb[k], 5e-2);
}

TEST(Densify, RespectsCap) {
  GaussianSet s = random_set(50, 6);
  for (std::size_t i = 0; i < s.size(); ++i) s.opacity_logits(i, 0) = 2.0;
  DensifyStats stats;
  stats.reset(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) stats.add(i, 1.0);
  DensifyConfig cfg;
  cfg.max_gaussians = 60;
  std::mt19937_64 rng(0);
  densify_and_prune(s, stats, cfg, rng);
  EXPECT_LE(s.size(), 60u);
}

TEST(Densify, PruningEverythingThrows) {
  GaussianSet s = random_set(5, 7);
  for (std::size_t i = 0; i < s.size(); ++i) s.opacity_logits(i, 0) = -20.0;
  DensifyStats stats;
  stats.reset(s.size());
  std::mt19937_64 rng(0);
  EXPECT_THROW(densify_and_prune(s, stats, DensifyConfig{}, rng), DegenerateSceneError);
}

TEST(Ply, RoundTripBinaryAndAscii) {
  GaussianSet s = random_set(37, 8);
  // f32-representable values round-trip exactly
  for (auto* t : s.tensors()) {
    for (double& v : t->value) v = static_cast<double>(static_cast<float>(v));
  }
  for (PlyFormat f : {PlyFormat::kBinaryLittleEndian, PlyFormat::kAscii}) {
    const std::string path = temp_path(f == PlyFormat::kAscii ? "rt_ascii.ply" : "rt_bin.ply");
    save_ply(s, path, f);
    GaussianSet back = load_ply(path);
    ASSERT_EQ(back.size(), s.size());
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(back.tensors()[k]->value, s.tensors()[k]->value);
    std::filesystem::remove(path);
  }
}

TEST(Ply, EmptySet) {
  GaussianSet s;
  s.resize(0);
  const std::string path = temp_path("empty.ply");
  save_ply(s, path);
  EXPECT_EQ(load_ply(path).size(), 0u);
  std::filesystem::remove(path);
}

TEST(Ply, HandWrittenFixture) {
  const GaussianSet s = load_ply(std::string(GSAVATAR_SOURCE_DIR) + "/data/fixtures/two_splat.ply");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.position(0), Vec3(0.5, -0.25, 1.0));
  EXPECT_EQ(s.log_scales(0, 1), -2.5);
  EXPECT_EQ(s.rotation(0), Quat::identity());
  EXPECT_EQ(s.opacity_logits(0, 0), 0.0);
  EXPECT_EQ(s.features(0, 0), 0.5);
  EXPECT_EQ(s.features(0, 31), -1.0);
  EXPECT_EQ(s.position(1), Vec3(-1.0, 2.0, 0.125));
  EXPECT_EQ(s.rotation(1), (Quat{0, 1, 0, 0}));
  EXPECT_EQ(s.opacity_logits(1, 0), -2.25);
  EXPECT_EQ(s.features(1, 31), 0.75);
}

TEST(Ply, MalformedFileReportsContext) {
  const std::string path = temp_path("bad.ply");
  {
    std::ofstream out(path);
    out << "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1.0 oops\n";
  }
  try {
    load_ply(path);
    FAIL() << "expected PlyError";
  } catch (const PlyError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(path), std::string::npos) << msg;
  }
  std::filesystem::remove(path);
}
