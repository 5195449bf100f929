#pragma once

// Float images and 8-bit PNG I/O.

#include <span>
#include <string>
#include <vector>

namespace gsavatar {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;  // row-major, interleaved channels, nominally [0,1]

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// Values are clamped to [0,1] and rounded to 8 bits (1 or 3 channels).
void write_png(const std::string& path, const Image& img);
void write_png(const std::string& path, int width, int height, int channels, std::span<const double> data);
/// Reads 8-bit gray/RGB/RGBA PNGs; alpha is dropped. Values scaled to [0,1].
Image read_png(const std::string& path);

}  // namespace gsavatar
