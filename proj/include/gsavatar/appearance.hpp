#pragma once

// Color decoding: canonicalized view direction, SH embedding, a one-hidden-
// layer MLP over [f, z, Z_c, SH(d)], and per-frame latent codes.

#include "gsavatar/geometry.hpp"
#include "gsavatar/mlp.hpp"

#include <random>

namespace gsavatar {

inline constexpr int kFrameLatentDim = 16;
inline constexpr int kColorInputs = 32 + 16 + kFrameLatentDim + kShCoeffs;

struct ViewDirResult {
  Vec3 dir;             // canonical unit direction
  bool fallback = false;  // linear block was singular, input returned
};

/// d_hat = normalize(inverse(T3) d). Falls back to d when |det(T3)| < 1e-9.
ViewDirResult canonicalize_viewdir(const Vec3& d, const Mat3& linear);

struct ViewDirGrad {
  Vec3 d_dir;
  Mat3 d_linear;
};
ViewDirGrad canonicalize_viewdir_backward(const Vec3& d, const Mat3& linear, const Vec3& g_out);

/// Random rotation from roll, pitch, yaw drawn uniformly in [0, max_deg).
Mat3 viewdir_augmentation(std::mt19937_64& rng, double max_deg);
Vec3 viewdir_augment(const Vec3& dir, std::mt19937_64& rng, double max_deg = 45.0);

struct ColorCache {
  MlpCache mlp;
  Eigen::MatrixXd rgb;
};

class ColorMlp {
 public:
  ColorMlp() = default;
  ColorMlp(int hidden_width, std::mt19937_64& rng);

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  /// Inputs (80 x N) ordered f(32), z(16), Z_c(16), SH(16); returns RGB in (0,1).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, ColorCache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns d(loss)/d(inputs).
  Eigen::MatrixXd backward(const ColorCache& cache, const Eigen::MatrixXd& d_rgb);

 private:
  Mlp mlp_;
};

/// Per-training-frame codes. Frames outside the table use the last code.
class FrameLatents {
 public:
  FrameLatents() = default;
  explicit FrameLatents(std::size_t frames) : codes_(frames, kFrameLatentDim) {}

  std::size_t frames() const { return codes_.rows; }
  std::size_t resolve(long frame) const;
  Eigen::VectorXd code(long frame) const;
  void add_grad(long frame, const Eigen::VectorXd& g);

  Tensor& codes() { return codes_; }
  const Tensor& codes() const { return codes_; }

 private:
  Tensor codes_;
};

}  // namespace gsavatar
