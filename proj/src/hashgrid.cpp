#include "gsavatar/hashgrid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsavatar {

std::uint32_t spatial_hash(std::int64_t i, std::int64_t j, std::int64_t k, int log2_size) {
  const std::uint32_t h = static_cast<std::uint32_t>(i) * 1u ^ static_cast<std::uint32_t>(j) * 2654435761u ^
                          static_cast<std::uint32_t>(k) * 805459861u;
  return h & ((1u << log2_size) - 1u);
}

HashGrid::HashGrid(const HashGridConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.levels < 1 || cfg.features < 1 || cfg.log2_table_size < 1 || cfg.log2_table_size > 30 ||
      cfg.base_resolution < 1 || cfg.finest_resolution < cfg.base_resolution) {
    throw std::invalid_argument("invalid hash grid configuration");
  }
  const double growth = cfg.levels > 1 ? std::exp((std::log(static_cast<double>(cfg.finest_resolution)) -
                                                   std::log(static_cast<double>(cfg.base_resolution))) /
                                                  (cfg.levels - 1))
                                       : 1.0;
  const std::size_t cap = std::size_t{1} << cfg.log2_table_size;
  std::size_t total = 0;
  for (int l = 0; l < cfg.levels; ++l) {
    int res = static_cast<int>(std::floor(cfg.base_resolution * std::pow(growth, l) + 1e-9));
    if (!resolutions_.empty() && res <= resolutions_.back()) res = resolutions_.back() + 1;
    resolutions_.push_back(res);
    const std::size_t verts = static_cast<std::size_t>(res + 1);
    const std::size_t dense_size = verts * verts * verts;
    const bool is_dense = dense_size <= cap;
    dense_.push_back(is_dense ? 1 : 0);
    sizes_.push_back(is_dense ? dense_size : cap);
    offsets_.push_back(total);
    total += sizes_.back();
  }
  table_ = Tensor(total, static_cast<std::size_t>(cfg.features));
  std::uniform_real_distribution<double> u(-cfg.init_range, cfg.init_range);
  for (auto& v : table_.value) v = u(rng);
}

std::size_t HashGrid::entry(int level, std::int64_t i, std::int64_t j, std::int64_t k) const {
  const auto l = static_cast<std::size_t>(level);
  if (dense_[l]) {
    const auto v = static_cast<std::int64_t>(resolutions_[l] + 1);
    return offsets_[l] + static_cast<std::size_t>(i + v * (j + v * k));
  }
  return offsets_[l] + spatial_hash(i, j, k, cfg_.log2_table_size);
}

namespace {

struct Cell {
  std::int64_t base[3];
  double frac[3];
};

Cell locate(const Vec3& x, int res) {
  Cell c;
  for (int a = 0; a < 3; ++a) {
    const double p = std::clamp(x[a], 0.0, 1.0) * res;
    std::int64_t b = static_cast<std::int64_t>(std::floor(p));
    if (b >= res) b = res - 1;
    c.base[a] = b;
    c.frac[a] = p - static_cast<double>(b);
  }
  return c;
}

}  // namespace

void HashGrid::encode(const Vec3& x, std::span<double> out) const {
  const int f = cfg_.features;
  std::fill(out.begin(), out.end(), 0.0);
  for (int l = 0; l < cfg_.levels; ++l) {
    const Cell c = locate(x, resolutions_[static_cast<std::size_t>(l)]);
    double* o = out.data() + l * f;
    for (int corner = 0; corner < 8; ++corner) {
      const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
      const double w = (bx ? c.frac[0] : 1.0 - c.frac[0]) * (by ? c.frac[1] : 1.0 - c.frac[1]) *
                       (bz ? c.frac[2] : 1.0 - c.frac[2]);
      const std::size_t e = entry(l, c.base[0] + bx, c.base[1] + by, c.base[2] + bz);
      const double* t = table_.value.data() + e * static_cast<std::size_t>(f);
      for (int q = 0; q < f; ++q) o[q] += w * t[q];
    }
  }
}

Vec3 HashGrid::backward(const Vec3& x, std::span<const double> d_out) {
  const int f = cfg_.features;
  Vec3 dx = Vec3::Zero();
  for (int l = 0; l < cfg_.levels; ++l) {
    const int res = resolutions_[static_cast<std::size_t>(l)];
    const Cell c = locate(x, res);
    const double* g = d_out.data() + l * f;
    for (int corner = 0; corner < 8; ++corner) {
      const int b[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
      double wa[3], dwa[3];
      for (int a = 0; a < 3; ++a) {
        wa[a] = b[a] ? c.frac[a] : 1.0 - c.frac[a];
        dwa[a] = b[a] ? 1.0 : -1.0;
      }
      const double w = wa[0] * wa[1] * wa[2];
      const std::size_t e = entry(l, c.base[0] + b[0], c.base[1] + b[1], c.base[2] + b[2]);
      const double* t = table_.value.data() + e * static_cast<std::size_t>(f);
      double* tg = table_.grad.data() + e * static_cast<std::size_t>(f);
      double dot = 0.0;
      for (int q = 0; q < f; ++q) {
        tg[q] += w * g[q];
        dot += t[q] * g[q];
      }
      dx[0] += dot * dwa[0] * wa[1] * wa[2] * res;
      dx[1] += dot * wa[0] * dwa[1] * wa[2] * res;
      dx[2] += dot * wa[0] * wa[1] * dwa[2] * res;
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (x[a] < 0.0 || x[a] > 1.0) dx[a] = 0.0;
  }
  return dx;
}

}  // namespace gsavatar
