#pragma once

// Photometric, mask, perceptual-proxy and as-isometric-as-possible losses.
// Each returns the value and the gradient wrt its (non-reference) inputs.

#include "gsavatar/geometry.hpp"

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsavatar {

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

/// mean |pred - gt| over all entries.
LossValue loss_l1(std::span<const double> pred, std::span<const double> gt);
/// mean |O - mask| over pixels.
LossValue loss_mask(std::span<const double> opacity, std::span<const double> mask);

struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

/// Tight box around mask > 0.5; the full image when the mask is empty.
PixelRect mask_bbox(std::span<const double> mask, int width, int height);

class UnknownPluginError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Perceptual term on RGB images (H x W x 3) restricted to a crop.
class PerceptualLoss {
 public:
  virtual ~PerceptualLoss() = default;
  virtual std::string name() const = 0;
  virtual LossValue evaluate(std::span<const double> pred, std::span<const double> gt, int width, int height,
                             const PixelRect& crop) const = 0;
};

/// Mean over 3 levels of the l1 distance between box-downsampled crops
/// (factor 2 per level).
class PyramidL1Loss : public PerceptualLoss {
 public:
  explicit PyramidL1Loss(int levels = 3) : levels_(levels) {}
  std::string name() const override { return "pyramid_l1"; }
  LossValue evaluate(std::span<const double> pred, std::span<const double> gt, int width, int height,
                     const PixelRect& crop) const override;

 private:
  int levels_;
};

/// Known names: "pyramid_l1", "none". Throws UnknownPluginError otherwise.
std::unique_ptr<PerceptualLoss> make_perceptual_loss(const std::string& name);
std::vector<std::string> perceptual_loss_names();

struct AiapPositionResult {
  double value = 0.0;
  std::vector<Vec3> d_canonical;
  std::vector<Vec3> d_observed;
};

/// sum_i sum_{j in N(i)} | |x_c^i - x_c^j| - |x_o^i - x_o^j| | / (N k).
AiapPositionResult loss_aiap_position(std::span<const Vec3> canonical, std::span<const Vec3> observed,
                                      const KnnGraph& knn);

struct AiapCovarianceResult {
  double value = 0.0;
  std::vector<Mat3> d_canonical;
  std::vector<Mat3> d_observed;
};

/// Same form with Frobenius distances between covariance matrices.
AiapCovarianceResult loss_aiap_covariance(std::span<const Mat3> canonical, std::span<const Mat3> observed,
                                          const KnnGraph& knn);

}  // namespace gsavatar
