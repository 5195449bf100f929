#pragma once

// Canonical Gaussian set: learnable per-splat state, initialization from a
// template surface, adaptive densification/pruning, and PLY persistence.

#include "gsavatar/geometry.hpp"
#include "gsavatar/skeleton.hpp"
#include "gsavatar/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gsavatar {

inline constexpr std::size_t kFeatureDim = 32;

/// Structure-of-arrays Gaussian state. Scales are stored as logs, opacity as
/// a logit, rotations as unnormalized quaternions (w, x, y, z).
struct GaussianSet {
  Tensor positions{0, 3};
  Tensor log_scales{0, 3};
  Tensor rotations{0, 4};
  Tensor opacity_logits{0, 1};
  Tensor features{0, kFeatureDim};
  KnnGraph knn;
  std::size_t knn_k = kDefaultKnn;

  std::size_t size() const { return positions.rows; }
  bool consistent() const;

  Vec3 position(std::size_t i) const { return {positions(i, 0), positions(i, 1), positions(i, 2)}; }
  Vec3 scale(std::size_t i) const;
  Quat rotation(std::size_t i) const {
    return {rotations(i, 0), rotations(i, 1), rotations(i, 2), rotations(i, 3)};
  }
  double opacity(std::size_t i) const;

  std::vector<Vec3> position_list() const;
  void rebuild_knn();
  void rebuild_knn(std::size_t k);
  void resize(std::size_t n);
  void gather(std::span<const std::size_t> src);

  std::vector<Tensor*> tensors() { return {&positions, &log_scales, &rotations, &opacity_logits, &features}; }
};

inline constexpr double kInitialOpacity = 0.1;

/// n area-weighted surface samples; isotropic scale equal to the mean
/// nearest-neighbour distance; identity rotation; opacity 0.1; zero features.
GaussianSet init_from_template(const SkinnedTemplate& tmpl, std::size_t n, std::uint64_t seed);

struct DensifyStats {
  std::vector<double> grad_accum;
  std::vector<std::uint32_t> count;

  void reset(std::size_t n);
  void add(std::size_t i, double view_grad_norm);
  double mean(std::size_t i) const;
};

struct DensifyConfig {
  double grad_threshold = 2e-4;
  double min_opacity = 0.005;
  double percent_dense = 0.01;
  double scene_extent = 1.0;
  std::size_t max_gaussians = 200000;
  double split_scale_divisor = 1.6;
  std::size_t split_children = 2;
};

/// Row provenance after a density change: source[i] is the old row that new
/// row i continues (optimizer state carries over), or -1 for a fresh row.
struct DensifyResult {
  std::vector<long> source;
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
};

class DegenerateSceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Clones small high-gradient splats (opacity split so two stacked copies
/// match the original), splits large ones into children scaled by
/// 1/split_scale_divisor and sampled inside the parent, then removes splats
/// with opacity below min_opacity. Rebuilds the KNN graph and resets stats.
DensifyResult densify_and_prune(GaussianSet& set, DensifyStats& stats, const DensifyConfig& cfg,
                                std::mt19937_64& rng);

/// Opacity of one of two stacked copies that together reproduce alpha.
double split_opacity(double alpha);

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

class PlyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PlyFormat { kBinaryLittleEndian, kAscii };

/// Per-vertex float properties: x y z, log_scale_0..2, rot_0..3 (w x y z),
/// alpha_logit, f_0..f_31.
void save_ply(const GaussianSet& set, const std::string& path,
              PlyFormat format = PlyFormat::kBinaryLittleEndian);
GaussianSet load_ply(const std::string& path);

}  // namespace gsavatar
