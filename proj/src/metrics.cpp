#include "gsavatar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace gsavatar {

double psnr(std::span<const double> img, std::span<const double> ref) {
  if (img.size() != ref.size() || img.empty()) throw std::invalid_argument("psnr: size mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) mse += (img[i] - ref[i]) * (img[i] - ref[i]);
  mse /= static_cast<double>(img.size());
  if (mse == 0.0) return kPsnrIdentical;
  return std::min(kPsnrIdentical, 10.0 * std::log10(1.0 / mse));
}

double ssim(std::span<const double> img, std::span<const double> ref, int width, int height, int channels) {
  if (img.size() != ref.size() || img.size() != static_cast<std::size_t>(width) * height * channels) {
    throw std::invalid_argument("ssim: size mismatch");
  }
  int win = std::min({11, width, height});
  if (win % 2 == 0) --win;
  const int half = win / 2;
  const double sigma = 1.5;
  std::vector<double> kernel(static_cast<std::size_t>(win));
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    kernel[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - half) * (i - half) / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(i)];
  }
  for (auto& k : kernel) k /= ksum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < channels; ++c) {
    auto px = [&](std::span<const double> im, int x, int y) {
      return im[(static_cast<std::size_t>(y) * width + x) * channels + c];
    };
    for (int y = half; y < height - half; ++y) {
      for (int x = half; x < width - half; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = -half; dy <= half; ++dy) {
          for (int dx = -half; dx <= half; ++dx) {
            const double w = kernel[static_cast<std::size_t>(dy + half)] * kernel[static_cast<std::size_t>(dx + half)];
            const double a = px(img, x + dx, y + dy), b = px(ref, x + dx, y + dy);
            mx += w * a;
            my += w * b;
            sxx += w * a * a;
            syy += w * b * b;
            sxy += w * a * b;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : 1.0;
}

double mask_iou(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] > 0.5, y = b[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace gsavatar
