#include "gsavatar/appearance.hpp"

#include <Eigen/LU>

#include <cmath>
#include <numbers>

namespace gsavatar {

ViewDirResult canonicalize_viewdir(const Vec3& d, const Mat3& linear) {
  if (std::abs(linear.determinant()) < 1e-9) return {d, true};
  const Vec3 v = linear.inverse() * d;
  return {v.normalized(), false};
}

ViewDirGrad canonicalize_viewdir_backward(const Vec3& d, const Mat3& linear, const Vec3& g_out) {
  ViewDirGrad g;
  if (std::abs(linear.determinant()) < 1e-9) {
    g.d_dir = g_out;
    g.d_linear.setZero();
    return g;
  }
  const Mat3 inv = linear.inverse();
  const Vec3 v = inv * d;
  const Vec3 gv = normalize_vec_backward(v, g_out);
  g.d_dir = inv.transpose() * gv;
  // d(A^-1) = -A^-1 dA A^-1
  g.d_linear = -inv.transpose() * gv * v.transpose();
  return g;
}

Mat3 viewdir_augmentation(std::mt19937_64& rng, double max_deg) {
  if (max_deg <= 0.0) return Mat3::Identity();
  std::uniform_real_distribution<double> u(0.0, max_deg * std::numbers::pi / 180.0);
  const double roll = u(rng), pitch = u(rng), yaw = u(rng);
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

Vec3 viewdir_augment(const Vec3& dir, std::mt19937_64& rng, double max_deg) {
  if (max_deg <= 0.0) return dir;
  return (viewdir_augmentation(rng, max_deg) * dir).normalized();
}

ColorMlp::ColorMlp(int hidden_width, std::mt19937_64& rng) {
  mlp_ = Mlp(MlpShape{kColorInputs, hidden_width, 1, 3}, rng);
}

Eigen::MatrixXd ColorMlp::forward(const Eigen::MatrixXd& inputs, ColorCache* cache) const {
  MlpCache local;
  const Eigen::MatrixXd logits = mlp_.forward(inputs, cache ? &cache->mlp : &local);
  Eigen::MatrixXd rgb = logits.unaryExpr([](double x) { return sigmoid(x); });
  if (cache) cache->rgb = rgb;
  return rgb;
}

Eigen::MatrixXd ColorMlp::backward(const ColorCache& cache, const Eigen::MatrixXd& d_rgb) {
  const Eigen::MatrixXd d_logits = d_rgb.array() * cache.rgb.array() * (1.0 - cache.rgb.array());
  return mlp_.backward(cache.mlp, d_logits);
}

std::size_t FrameLatents::resolve(long frame) const {
  if (codes_.rows == 0) return 0;
  if (frame < 0 || static_cast<std::size_t>(frame) >= codes_.rows) return codes_.rows - 1;
  return static_cast<std::size_t>(frame);
}

Eigen::VectorXd FrameLatents::code(long frame) const {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(kFrameLatentDim);
  if (codes_.rows == 0) return z;
  const std::size_t r = resolve(frame);
  for (int k = 0; k < kFrameLatentDim; ++k) z[k] = codes_(r, static_cast<std::size_t>(k));
  return z;
}

void FrameLatents::add_grad(long frame, const Eigen::VectorXd& g) {
  if (codes_.rows == 0) return;
  const std::size_t r = resolve(frame);
  for (int k = 0; k < kFrameLatentDim; ++k) codes_.g(r, static_cast<std::size_t>(k)) += g[k];
}

}  // namespace gsavatar
