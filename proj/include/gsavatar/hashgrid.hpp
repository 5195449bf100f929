#pragma once

// Multiresolution hash encoding of normalized 3D positions.

#include "gsavatar/geometry.hpp"
#include "gsavatar/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gsavatar {

struct HashGridConfig {
  int levels = 16;
  int features = 2;
  int log2_table_size = 16;
  int base_resolution = 16;
  int finest_resolution = 2048;
  double init_range = 1e-4;  // tables start in U(-r, r)
};

class HashGrid {
 public:
  HashGrid() = default;
  HashGrid(const HashGridConfig& cfg, std::mt19937_64& rng);

  const HashGridConfig& config() const { return cfg_; }
  int output_dim() const { return cfg_.levels * cfg_.features; }
  int resolution(int level) const { return resolutions_[static_cast<std::size_t>(level)]; }
  bool dense(int level) const { return dense_[static_cast<std::size_t>(level)] != 0; }
  std::size_t level_size(int level) const { return sizes_[static_cast<std::size_t>(level)]; }
  std::size_t level_offset(int level) const { return offsets_[static_cast<std::size_t>(level)]; }

  /// Row of the table entry for integer vertex (i, j, k) at a level.
  std::size_t entry(int level, std::int64_t i, std::int64_t j, std::int64_t k) const;

  /// x in [0,1]^3 (clamped) -> levels*features values.
  void encode(const Vec3& x, std::span<double> out) const;
  /// Adds table gradients for d_out and returns d(loss)/dx.
  Vec3 backward(const Vec3& x, std::span<const double> d_out);

  Tensor& table() { return table_; }
  const Tensor& table() const { return table_; }

 private:
  HashGridConfig cfg_;
  std::vector<int> resolutions_;
  std::vector<char> dense_;
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  Tensor table_;  // rows = total entries over all levels, cols = features
};

/// Spatial hash (x*1 ^ y*2654435761 ^ z*805459861) mod 2^log2_size.
std::uint32_t spatial_hash(std::int64_t i, std::int64_t j, std::int64_t k, int log2_size);

}  // namespace gsavatar
