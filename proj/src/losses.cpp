#include "gsavatar/losses.hpp"

#include <algorithm>
#include <cmath>

namespace gsavatar {

namespace {

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

}  // namespace

LossValue loss_l1(std::span<const double> pred, std::span<const double> gt) {
  check_sizes(pred.size(), gt.size(), "loss_l1");
  LossValue out;
  out.grad.resize(pred.size());
  if (pred.empty()) return out;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    out.value += std::abs(d);
    out.grad[i] = sign(d) * inv;
  }
  out.value *= inv;
  return out;
}

LossValue loss_mask(std::span<const double> opacity, std::span<const double> mask) {
  check_sizes(opacity.size(), mask.size(), "loss_mask");
  return loss_l1(opacity, mask);
}

PixelRect mask_bbox(std::span<const double> mask, int width, int height) {
  PixelRect r{width, height, 0, 0};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (mask[static_cast<std::size_t>(y) * width + x] > 0.5) {
        r.x0 = std::min(r.x0, x);
        r.y0 = std::min(r.y0, y);
        r.x1 = std::max(r.x1, x + 1);
        r.y1 = std::max(r.y1, y + 1);
      }
    }
  }
  if (r.x1 <= r.x0 || r.y1 <= r.y0) return {0, 0, width, height};
  return r;
}

LossValue PyramidL1Loss::evaluate(std::span<const double> pred, std::span<const double> gt, int width, int height,
                                  const PixelRect& crop) const {
  check_sizes(pred.size(), gt.size(), "pyramid_l1");
  check_sizes(pred.size(), static_cast<std::size_t>(width) * height * 3, "pyramid_l1");
  LossValue out;
  out.grad.assign(pred.size(), 0.0);
  int used = 0;
  for (int level = 0; level < levels_; ++level) {
    const int f = 1 << level;
    const int w = crop.width() / f, h = crop.height() / f;
    if (w < 1 || h < 1) break;
    ++used;
  }
  if (used == 0) return out;
  for (int level = 0; level < used; ++level) {
    const int f = 1 << level;
    const int w = crop.width() / f, h = crop.height() / f;
    const double cell = 1.0 / (f * f);
    const double norm = 1.0 / (static_cast<double>(w) * h * 3 * used);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          double d = 0.0;
          for (int dy = 0; dy < f; ++dy) {
            for (int dx = 0; dx < f; ++dx) {
              const std::size_t idx =
                  (static_cast<std::size_t>(crop.y0 + y * f + dy) * width + crop.x0 + x * f + dx) * 3 + c;
              d += (pred[idx] - gt[idx]) * cell;
            }
          }
          out.value += std::abs(d) * norm;
          const double g = sign(d) * norm * cell;
          for (int dy = 0; dy < f; ++dy) {
            for (int dx = 0; dx < f; ++dx) {
              out.grad[(static_cast<std::size_t>(crop.y0 + y * f + dy) * width + crop.x0 + x * f + dx) * 3 + c] += g;
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

class NoPerceptualLoss : public PerceptualLoss {
 public:
  std::string name() const override { return "none"; }
  LossValue evaluate(std::span<const double> pred, std::span<const double>, int, int,
                     const PixelRect&) const override {
    LossValue out;
    out.grad.assign(pred.size(), 0.0);
    return out;
  }
};

}  // namespace

std::unique_ptr<PerceptualLoss> make_perceptual_loss(const std::string& name) {
  if (name == "pyramid_l1") return std::make_unique<PyramidL1Loss>();
  if (name == "none") return std::make_unique<NoPerceptualLoss>();
  throw UnknownPluginError("unknown perceptual loss plugin '" + name + "'");
}

std::vector<std::string> perceptual_loss_names() { return {"pyramid_l1", "none"}; }

AiapPositionResult loss_aiap_position(std::span<const Vec3> canonical, std::span<const Vec3> observed,
                                      const KnnGraph& knn) {
  check_sizes(canonical.size(), observed.size(), "loss_aiap_position");
  const std::size_t n = canonical.size();
  AiapPositionResult out;
  out.d_canonical.assign(n, Vec3::Zero());
  out.d_observed.assign(n, Vec3::Zero());
  if (n < 2 || knn.k == 0) return out;
  check_sizes(knn.size(), n, "loss_aiap_position knn");
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(knn.k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t j : knn.neighbors(i)) {
      const Vec3 ec = canonical[i] - canonical[j];
      const Vec3 eo = observed[i] - observed[j];
      const double dc = ec.norm(), dobs = eo.norm();
      const double diff = dc - dobs;
      out.value += std::abs(diff) * norm;
      const double s = sign(diff) * norm;
      if (s == 0.0) continue;
      if (dc > 0.0) {
        const Vec3 g = s * ec / dc;
        out.d_canonical[i] += g;
        out.d_canonical[j] -= g;
      }
      if (dobs > 0.0) {
        const Vec3 g = -s * eo / dobs;
        out.d_observed[i] += g;
        out.d_observed[j] -= g;
      }
    }
  }
  return out;
}

AiapCovarianceResult loss_aiap_covariance(std::span<const Mat3> canonical, std::span<const Mat3> observed,
                                          const KnnGraph& knn) {
  check_sizes(canonical.size(), observed.size(), "loss_aiap_covariance");
  const std::size_t n = canonical.size();
  AiapCovarianceResult out;
  out.d_canonical.assign(n, Mat3::Zero());
  out.d_observed.assign(n, Mat3::Zero());
  if (n < 2 || knn.k == 0) return out;
  check_sizes(knn.size(), n, "loss_aiap_covariance knn");
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(knn.k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t j : knn.neighbors(i)) {
      const Mat3 ec = canonical[i] - canonical[j];
      const Mat3 eo = observed[i] - observed[j];
      const double dc = ec.norm(), dobs = eo.norm();
      const double diff = dc - dobs;
      out.value += std::abs(diff) * norm;
      const double s = sign(diff) * norm;
      if (s == 0.0) continue;
      if (dc > 0.0) {
        const Mat3 g = s * ec / dc;
        out.d_canonical[i] += g;
        out.d_canonical[j] -= g;
      }
      if (dobs > 0.0) {
        const Mat3 g = -s * eo / dobs;
        out.d_observed[i] += g;
        out.d_observed[j] -= g;
      }
    }
  }
  return out;
}

}  // namespace gsavatar
