#include "gsavatar/losses.hpp"
#include "gsavatar/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace gsavatar;
using namespace gsavatar::test;

namespace {

std::vector<double> random_image(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Straightforward windowed SSIM: Gaussian weights normalized over the full
// 11x11 window, valid positions only, mean over positions and channels.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int w, int h, int ch) {
  const int r = 5;
  double kernel[11][11], ksum = 0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) ksum += kernel[y + r][x + r] = std::exp(-(x * x + y * y) / (2 * 1.5 * 1.5));
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  for (int c = 0; c < ch; ++c) {
    for (int cy = r; cy < h - r; ++cy) {
      for (int cx = r; cx < w - r; ++cx) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = -r; y <= r; ++y) {
          for (int x = -r; x <= r; ++x) {
            const double k = kernel[y + r][x + r] / ksum;
            const double va = a[static_cast<std::size_t>(((cy + y) * w + cx + x) * ch + c)];
            const double vb = b[static_cast<std::size_t>(((cy + y) * w + cx + x) * ch + c)];
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        }
        saa -= ma * ma;
        sbb -= mb * mb;
        sab -= ma * mb;
        total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
        ++count;
      }
    }
  }
  return total / count;
}

KnnGraph chain_knn(std::size_t n) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.emplace_back(static_cast<double>(i), 0.0, 0.0);
  return knn_build(pts, 2);
}

}  // namespace

TEST(Photometric, L1ValueAndGradient) {
  const std::vector<double> p{0.5, 0.2, 1.0, 0.0}, g{0.25, 0.2, 0.0, 1.0};
  const LossValue l = loss_l1(p, g);
  EXPECT_NEAR(l.value, (0.25 + 0 + 1 + 1) / 4.0, 1e-15);
  EXPECT_EQ(l.grad[0], 0.25);
  EXPECT_EQ(l.grad[2], 0.25);
  EXPECT_EQ(l.grad[3], -0.25);
  EXPECT_EQ(loss_l1(g, g).value, 0.0);
}

TEST(Photometric, MaskLoss) {
  const std::vector<double> o{0.9, 0.1, 0.5}, m{1.0, 0.0, 1.0};
  EXPECT_NEAR(loss_mask(o, m).value, (0.1 + 0.1 + 0.5) / 3.0, 1e-15);
  EXPECT_NEAR(loss_mask(o, m).grad[1], 1.0 / 3.0, 1e-15);
}

TEST(Photometric, MaskBoundingBox) {
  std::vector<double> m(10 * 8, 0.0);
  m[3 * 10 + 2] = 1.0;
  m[5 * 10 + 7] = 1.0;
  const PixelRect r = mask_bbox(m, 10, 8);
  EXPECT_EQ(r.x0, 2);
  EXPECT_EQ(r.x1, 8);
  EXPECT_EQ(r.y0, 3);
  EXPECT_EQ(r.y1, 6);
  const PixelRect full = mask_bbox(std::vector<double>(80, 0.0), 10, 8);
  EXPECT_EQ(full.width(), 10);
  EXPECT_EQ(full.height(), 8);
}

TEST(Perceptual, RegistryAndZeroOnIdenticalImages) {
  EXPECT_THROW(make_perceptual_loss("vgg"), UnknownPluginError);
  const auto p = make_perceptual_loss("pyramid_l1");
  std::mt19937_64 rng(1);
  const auto img = random_image(rng, 16 * 12 * 3);
  EXPECT_EQ(p->evaluate(img, img, 16, 12, {0, 0, 16, 12}).value, 0.0);
  EXPECT_EQ(make_perceptual_loss("none")->evaluate(img, random_image(rng, img.size()), 16, 12, {0, 0, 16, 12}).value,
            0.0);
}

TEST(Perceptual, GradientMatchesFiniteDifferencesAndIgnoresOutsideCrop) {
  const auto p = make_perceptual_loss("pyramid_l1");
  std::mt19937_64 rng(2);
  auto pred = random_image(rng, 20 * 14 * 3);
  const auto gt = random_image(rng, pred.size());
  const PixelRect crop{3, 2, 17, 12};
  const LossValue l = p->evaluate(pred, gt, 20, 14, crop);
  for (std::size_t i = 0; i < pred.size(); i += 11) {
    const double num = central_difference([&] { return p->evaluate(pred, gt, 20, 14, crop).value; }, pred[i], 1e-7);
    EXPECT_NEAR(l.grad[i], num, 1e-6);
  }
  EXPECT_EQ(l.grad[0], 0.0);
}

TEST(Aiap, ZeroUnderRigidMotion) {
  std::mt19937_64 rng(3);
  std::vector<Vec3> xc;
  std::vector<Mat3> cc;
  for (int i = 0; i < 50; ++i) {
    xc.push_back(random_vec(rng));
    const Mat3 a = random_mat(rng);
    cc.push_back(a * a.transpose());
  }
  const KnnGraph knn = knn_build(xc, 5);
  const Mat3 r = rotmat_oracle(random_quat(rng));
  const Vec3 t = random_vec(rng, 10.0);
  std::vector<Vec3> xo;
  std::vector<Mat3> co;
  for (int i = 0; i < 50; ++i) {
    xo.push_back(r * xc[static_cast<std::size_t>(i)] + t);
    co.push_back(r * cc[static_cast<std::size_t>(i)] * r.transpose());
  }
  EXPECT_LT(loss_aiap_position(xc, xo, knn).value, 1e-12);
  // the covariance term compares Frobenius norms of differences, which a rotation preserves
  EXPECT_LT(loss_aiap_covariance(cc, co, knn).value, 1e-12);
}

TEST(Aiap, HandComputedValue) {
  const std::vector<Vec3> xc{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const std::vector<Vec3> xo{{0, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  // neighbours: 0 -> {1,2}, 1 -> {0,2}, 2 -> {1,0}
  // |dc - do|: (1,1) for 0, (1,0) for 1, (0,1) for 2 => 4 / (3 * 2)
  EXPECT_NEAR(loss_aiap_position(xc, xo, chain_knn(3)).value, 4.0 / 6.0, 1e-15);
}

TEST(Aiap, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::vector<Vec3> xc, xo;
  std::vector<Mat3> cc, co;
  for (int i = 0; i < 12; ++i) {
    xc.push_back(random_vec(rng));
    xo.push_back(random_vec(rng));
    const Mat3 a = random_mat(rng), b = random_mat(rng);
    cc.push_back(a * a.transpose());
    co.push_back(b * b.transpose());
  }
  const KnnGraph knn = knn_build(xc, 3);
  const auto pos = loss_aiap_position(xc, xo, knn);
  const auto cov = loss_aiap_covariance(cc, co, knn);
  for (std::size_t i = 0; i < 12; ++i) {
    for (int a = 0; a < 3; ++a) {
      EXPECT_LT(rel_err(pos.d_canonical[i][a],
                        central_difference([&] { return loss_aiap_position(xc, xo, knn).value; }, xc[i][a], 1e-7), 1e-9),
                1e-5);
      EXPECT_LT(rel_err(pos.d_observed[i][a],
                        central_difference([&] { return loss_aiap_position(xc, xo, knn).value; }, xo[i][a], 1e-7), 1e-9),
                1e-5);
    }
    for (int k = 0; k < 9; ++k) {
      EXPECT_LT(rel_err(cov.d_observed[i].data()[k],
                        central_difference([&] { return loss_aiap_covariance(cc, co, knn).value; }, co[i].data()[k], 1e-5),
                        1e-9),
                1e-5);
    }
  }
}

TEST(Metrics, PsnrMatchesDefinition) {
  const std::vector<double> a{0.0, 0.5, 1.0, 0.25}, b{0.1, 0.5, 0.8, 0.25};
  const double mse = (0.01 + 0.04) / 4.0;
  EXPECT_NEAR(psnr(a, b), -10.0 * std::log10(mse), 1e-12);
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
}

TEST(Metrics, SsimMatchesWindowedOracle) {
  std::mt19937_64 rng(5);
  const int w = 24, h = 19;
  const auto a = random_image(rng, static_cast<std::size_t>(w * h * 3));
  auto b = a;
  std::normal_distribution<double> n(0.0, 0.1);
  for (double& v : b) v = std::clamp(v + n(rng), 0.0, 1.0);
  EXPECT_NEAR(ssim(a, b, w, h, 3), ssim_oracle(a, b, w, h, 3), 1e-10);
  EXPECT_NEAR(ssim(a, a, w, h, 3), 1.0, 1e-12);
  const std::vector<double> tiny(4 * 4, 0.3);
  EXPECT_NEAR(ssim(tiny, tiny, 4, 4, 1), 1.0, 1e-12);
}

TEST(Metrics, MaskIou) {
  const std::vector<double> a{1, 1, 0, 0, 0.6}, b{1, 0, 1, 0, 0.4};
  EXPECT_NEAR(mask_iou(a, b), 1.0 / 4.0, 1e-15);
  EXPECT_EQ(mask_iou(a, a), 1.0);
}
