#pragma once

// Image quality metrics.

#include <span>

namespace gsavatar {

inline constexpr double kPsnrIdentical = 99.0;

/// 10 log10(1 / MSE) for images in [0,1]; 99 when the images are identical.
double psnr(std::span<const double> img, std::span<const double> ref);

/// Mean SSIM over channels: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions. The
/// window shrinks (odd size) for images smaller than 11 px.
double ssim(std::span<const double> img, std::span<const double> ref, int width, int height, int channels);

/// Intersection over union of the > 0.5 regions.
double mask_iou(std::span<const double> a, std::span<const double> b);

}  // namespace gsavatar
