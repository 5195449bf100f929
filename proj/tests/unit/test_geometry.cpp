#include "gsavatar/geometry.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numbers>

using namespace gsavatar;
using namespace gsavatar::test;

TEST(Quat, IdentityGivesIdentityMatrix) {
  EXPECT_TRUE(quat_to_rotmat(Quat::identity()).isApprox(Mat3::Identity(), 0.0));
}

TEST(Quat, NinetyDegreesAboutZ) {
  const double h = std::sqrt(0.5);
  const Mat3 r = quat_to_rotmat({h, 0, 0, h});
  EXPECT_LT((r * Vec3::UnitX() - Vec3::UnitY()).norm(), 1e-15);
}

TEST(Quat, RandomRotationsAreOrthonormal) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Quat q = random_quat(rng);
    const Mat3 r = quat_to_rotmat(q);
    EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
    EXPECT_LT((r - rotmat_oracle(q)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Quat, ZeroNormThrows) { EXPECT_THROW(quat_to_rotmat({0, 0, 0, 0}), GeometryError); }

TEST(Quat, NormalizedHasUnitNorm) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Quat q = random_quat(rng);
    EXPECT_NEAR(q.normalized().norm(), 1.0, 1e-9);
  }
}

TEST(QuatMul, IdentityElement) {
  const Quat a = Quat{0.3, -0.2, 0.5, 0.1}.normalized();
  const Quat c = quat_mul(a, Quat::identity());
  EXPECT_DOUBLE_EQ(c.w, a.w);
  EXPECT_DOUBLE_EQ(c.x, a.x);
  EXPECT_DOUBLE_EQ(c.y, a.y);
  EXPECT_DOUBLE_EQ(c.z, a.z);
}

TEST(QuatMul, TwoQuarterTurnsMakeHalfTurn) {
  const double h = std::sqrt(0.5);
  const Mat3 r = quat_to_rotmat(quat_mul({h, 0, 0, h}, {h, 0, 0, h}));
  Mat3 expect;
  expect << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  EXPECT_LT((r - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(QuatMul, MatrixHomomorphism) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const Quat a = random_quat(rng).normalized(), b = random_quat(rng).normalized();
    const Mat3 lhs = quat_to_rotmat(quat_mul(a, b));
    const Mat3 rhs = rotmat_oracle(a) * rotmat_oracle(b);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(QuatMul, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Quat a = random_quat(rng), b = random_quat(rng);
  const Quat g = random_quat(rng);
  auto f = [&] {
    const Quat c = quat_mul(a, b);
    return g.w * c.w + g.x * c.x + g.y * c.y + g.z * c.z;
  };
  const auto [da, db] = quat_mul_backward(a, b, g);
  double* pa[] = {&a.w, &a.x, &a.y, &a.z};
  double* pb[] = {&b.w, &b.x, &b.y, &b.z};
  const double ga[] = {da.w, da.x, da.y, da.z}, gb[] = {db.w, db.x, db.y, db.z};
  for (int k = 0; k < 4; ++k) {
    EXPECT_LT(rel_err(ga[k], central_difference(f, *pa[k], 1e-6)), 1e-7);
    EXPECT_LT(rel_err(gb[k], central_difference(f, *pb[k], 1e-6)), 1e-7);
  }
}

TEST(QuatToRotmat, BackwardThroughNormalization) {
  std::mt19937_64 rng(5);
  Quat q = random_quat(rng);
  const Mat3 g = random_mat(rng);
  auto f = [&] { return (g.array() * quat_to_rotmat(q).array()).sum(); };
  const Quat d = quat_to_rotmat_backward(q, g);
  double* p[] = {&q.w, &q.x, &q.y, &q.z};
  const double an[] = {d.w, d.x, d.y, d.z};
  for (int k = 0; k < 4; ++k) EXPECT_LT(rel_err(an[k], central_difference(f, *p[k], 1e-6)), 1e-6);
}

TEST(Covariance, UnitScaleIdentityRotation) {
  EXPECT_TRUE(build_covariance({1, 1, 1}, Quat::identity()).isApprox(Mat3::Identity(), 0.0));
}

TEST(Covariance, AnisotropicDiagonal) {
  const Mat3 s = build_covariance({2, 1, 1}, Quat::identity());
  EXPECT_TRUE(s.isApprox(Vec3(4, 1, 1).asDiagonal().toDenseMatrix(), 0.0));
}

TEST(Covariance, NonPositiveScaleThrows) {
  EXPECT_THROW(build_covariance({1, 0, 1}, Quat::identity()), GeometryError);
  EXPECT_THROW(build_covariance({1, -1, 1}, Quat::identity()), GeometryError);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 s{u(rng), u(rng), u(rng)};
    const Mat3 sigma = build_covariance(s, random_quat(rng));
    EXPECT_LT((sigma - sigma.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3> es(sigma);
    std::array<double, 3> ev{es.eigenvalues()[0], es.eigenvalues()[1], es.eigenvalues()[2]};
    std::array<double, 3> sq{s[0] * s[0], s[1] * s[1], s[2] * s[2]};
    std::sort(ev.begin(), ev.end());
    std::sort(sq.begin(), sq.end());
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(ev[k], sq[k], 1e-9);
      EXPECT_GE(ev[k], -1e-12);
    }
  }
}

TEST(Covariance, FrobeniusInvariantUnderConjugation) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Mat3 a = build_covariance(random_vec(rng).cwiseAbs() + Vec3::Constant(0.1), random_quat(rng));
    const Mat3 b = build_covariance(random_vec(rng).cwiseAbs() + Vec3::Constant(0.1), random_quat(rng));
    const Mat3 r = rotmat_oracle(random_quat(rng));
    EXPECT_NEAR((r * (a - b) * r.transpose()).norm(), (a - b).norm(), 1e-9);
  }
}

TEST(Covariance, LinearBackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Mat3 l = random_mat(rng);
  Vec3 s = random_vec(rng).cwiseAbs() + Vec3::Constant(0.2);
  const Mat3 g = random_mat(rng);
  auto f = [&] { return (g.array() * covariance_from_linear(l, s).array()).sum(); };
  const CovarianceGrad d = covariance_from_linear_backward(l, s, g);
  for (int k = 0; k < 9; ++k) EXPECT_LT(rel_err(d.d_linear.data()[k], central_difference(f, l.data()[k], 1e-6)), 1e-7);
  for (int k = 0; k < 3; ++k) EXPECT_LT(rel_err(d.d_scale[k], central_difference(f, s[k], 1e-6)), 1e-7);
}

TEST(SphericalHarmonics, ConstantBand) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto b = sh_basis(random_vec(rng).normalized(), 0);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_NEAR(b[0], 0.28209479177, 1e-11);
  }
}

TEST(SphericalHarmonics, BandOneAlongZ) {
  const auto b = sh_basis({0, 0, 1}, 1);
  ASSERT_EQ(b.size(), 4u);
  // band-1 functions follow (y, z, x) up to the shared constant and sign
  EXPECT_NEAR(b[1], 0.0, 1e-15);
  EXPECT_NEAR(std::abs(b[2]), 0.4886025119029199, 1e-12);
  EXPECT_NEAR(b[3], 0.0, 1e-15);
}

TEST(SphericalHarmonics, LengthsAndErrors) {
  EXPECT_EQ(sh_basis({1, 0, 0}, 3).size(), 16u);
  EXPECT_EQ(sh_basis({1, 0, 0}, 2).size(), 9u);
  EXPECT_THROW(sh_basis({1, 0, 0}, 4), GeometryError);
  EXPECT_THROW(sh_basis({2, 0, 0}, 1), GeometryError);
}

TEST(SphericalHarmonics, OrthonormalByMonteCarlo) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  const int samples = 1000000;
  Eigen::Matrix<double, 16, 16> gram = Eigen::Matrix<double, 16, 16>::Zero();
  for (int i = 0; i < samples; ++i) {
    const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
    const auto y = sh_basis3(d);
    const Eigen::Map<const Eigen::Matrix<double, 16, 1>> v(y.data());
    gram.noalias() += v * v.transpose();
  }
  gram *= 4.0 * std::numbers::pi / samples;
  EXPECT_LT((gram - Eigen::Matrix<double, 16, 16>::Identity()).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(SphericalHarmonics, MatchesGeneralBasis) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const Vec3 d = random_vec(rng).normalized();
    const auto a = sh_basis(d, 3);
    const auto b = sh_basis3(d);
    for (int k = 0; k < 16; ++k) EXPECT_DOUBLE_EQ(a[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(k)]);
  }
}

TEST(SphericalHarmonics, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  Vec3 d = random_vec(rng).normalized();
  std::array<double, 16> g;
  for (double& v : g) v = random_vec(rng)[0];
  auto f = [&] {
    const auto y = sh_basis3(d);
    double s = 0;
    for (int k = 0; k < 16; ++k) s += g[static_cast<std::size_t>(k)] * y[static_cast<std::size_t>(k)];
    return s;
  };
  // the basis is treated as a polynomial, so perturb off the sphere freely
  const Vec3 an = sh_basis3_backward(d, g);
  for (int k = 0; k < 3; ++k) EXPECT_LT(rel_err(an[k], central_difference(f, d[k], 1e-7)), 1e-6);
}

TEST(NormalizeVec, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  Vec3 v = random_vec(rng);
  const Vec3 g = random_vec(rng);
  auto f = [&] { return g.dot(v.normalized()); };
  const Vec3 an = normalize_vec_backward(v, g);
  for (int k = 0; k < 3; ++k) EXPECT_LT(rel_err(an[k], central_difference(f, v[k], 1e-7)), 1e-6);
}

namespace {

std::vector<std::uint32_t> brute_force(const std::vector<Vec3>& pts, std::size_t i, std::size_t k) {
  std::vector<std::uint32_t> idx;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (j != i) idx.push_back(static_cast<std::uint32_t>(j));
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double da = (pts[a] - pts[i]).squaredNorm(), db = (pts[b] - pts[i]).squaredNorm();
    return da < db || (da == db && a < b);
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace

TEST(Knn, CollinearMiddlePoint) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {1.5, 0, 0}};
  const KnnGraph g = knn_build(pts, 1);
  EXPECT_EQ(g.neighbors(1)[0], 2u);
}

TEST(Knn, ClampsToNMinusOne) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};
  const KnnGraph g = knn_build(pts, 10);
  EXPECT_EQ(g.k, 2u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (auto j : g.neighbors(i)) EXPECT_NE(j, i);
  }
}

TEST(Knn, MatchesExhaustiveSearch) {
  for (std::size_t n : {7u, 300u, 500u, 2000u}) {
    std::mt19937_64 rng(n);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = random_vec(rng);
    const KnnGraph g = knn_build(pts, 5);
    for (std::size_t i = 0; i < n; ++i) {
      const auto expect = brute_force(pts, i, 5);
      const auto got = g.neighbors(i);
      ASSERT_EQ(got.size(), expect.size());
      for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], expect[k]) << "point " << i;
    }
  }
}
