#include "gsavatar/gaussians.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsavatar {

bool GaussianSet::consistent() const {
  const std::size_t n = positions.rows;
  return log_scales.rows == n && rotations.rows == n && opacity_logits.rows == n &&
         features.rows == n && features.cols == kFeatureDim && (n < 2 || knn.size() == n);
}

Vec3 GaussianSet::scale(std::size_t i) const {
  return {std::exp(log_scales(i, 0)), std::exp(log_scales(i, 1)), std::exp(log_scales(i, 2))};
}

double GaussianSet::opacity(std::size_t i) const { return sigmoid(opacity_logits(i, 0)); }

std::vector<Vec3> GaussianSet::position_list() const {
  std::vector<Vec3> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = position(i);
  return out;
}

void GaussianSet::rebuild_knn(std::size_t k) {
  knn_k = k;
  rebuild_knn();
}

void GaussianSet::rebuild_knn() {
  const auto pts = position_list();
  knn = knn_build(pts, knn_k);
}

void GaussianSet::resize(std::size_t n) {
  for (auto* t : tensors()) t->resize_rows(n);
}

void GaussianSet::gather(std::span<const std::size_t> src) {
  for (auto* t : tensors()) t->gather_rows(src);
}

GaussianSet init_from_template(const SkinnedTemplate& tmpl, std::size_t n, std::uint64_t seed) {
  if (tmpl.triangles().empty()) throw TemplateError("template has no triangles");
  std::mt19937_64 rng(seed);
  const auto samples = tmpl.sample_surface(n, rng);
  GaussianSet set;
  set.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) set.positions(i, a) = samples[i].position[a];
  }
  double mean_nn = 0.0;
  if (n >= 2) {
    const auto pts = set.position_list();
    const KnnGraph nn = knn_build(pts, 1);
    for (std::size_t i = 0; i < n; ++i) mean_nn += (pts[i] - pts[nn.neighbors(i)[0]]).norm();
    mean_nn /= static_cast<double>(n);
  }
  if (!(mean_nn > 0.0)) mean_nn = std::sqrt(tmpl.surface_area() / static_cast<double>(std::max<std::size_t>(n, 1)));
  const double log_s = std::log(mean_nn);
  const double a_logit = logit(kInitialOpacity);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) set.log_scales(i, a) = log_s;
    set.rotations(i, 0) = 1.0;
    set.opacity_logits(i, 0) = a_logit;
  }
  set.rebuild_knn();
  return set;
}

void DensifyStats::reset(std::size_t n) {
  grad_accum.assign(n, 0.0);
  count.assign(n, 0);
}

void DensifyStats::add(std::size_t i, double view_grad_norm) {
  grad_accum[i] += view_grad_norm;
  ++count[i];
}

double DensifyStats::mean(std::size_t i) const {
  return count[i] == 0 ? 0.0 : grad_accum[i] / static_cast<double>(count[i]);
}

double split_opacity(double alpha) { return 1.0 - std::sqrt(1.0 - alpha); }

DensifyResult densify_and_prune(GaussianSet& set, DensifyStats& stats, const DensifyConfig& cfg,
                                std::mt19937_64& rng) {
  const std::size_t n = set.size();
  if (stats.grad_accum.size() != n) stats.reset(n);
  DensifyResult result;

  // candidates ordered by gradient so the cap keeps the strongest
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (stats.mean(i) >= cfg.grad_threshold && stats.count[i] > 0) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return stats.mean(a) > stats.mean(b); });
  const double size_limit = cfg.percent_dense * cfg.scene_extent;

  std::vector<char> action(n, 0);  // 1 clone, 2 split
  std::size_t budget_used = n;
  for (std::size_t i : candidates) {
    const bool small = set.scale(i).maxCoeff() <= size_limit;
    const std::size_t extra = small ? 1 : cfg.split_children - 1;
    if (budget_used + extra > cfg.max_gaussians) continue;
    budget_used += extra;
    action[i] = small ? 1 : 2;
  }

  GaussianSet out;
  out.resize(0);
  std::vector<std::vector<double>> rows_pos, rows_ls, rows_rot, rows_op, rows_f;
  std::vector<long> source;
  auto push = [&](std::size_t i, long src, const Vec3& pos, const Vec3& log_s, double op_logit) {
    rows_pos.push_back({pos.x(), pos.y(), pos.z()});
    rows_ls.push_back({log_s.x(), log_s.y(), log_s.z()});
    const auto r = set.rotations.row(i);
    rows_rot.emplace_back(r.begin(), r.end());
    rows_op.push_back({op_logit});
    const auto f = set.features.row(i);
    rows_f.emplace_back(f.begin(), f.end());
    source.push_back(src);
  };

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> split_parents;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ls{set.log_scales(i, 0), set.log_scales(i, 1), set.log_scales(i, 2)};
    if (action[i] == 2) {
      split_parents.push_back(i);
      continue;
    }
    if (action[i] == 1) {
      const double op = logit(split_opacity(set.opacity(i)));
      push(i, static_cast<long>(i), set.position(i), ls, op);
      ++result.cloned;
      continue;
    }
    push(i, static_cast<long>(i), set.position(i), ls, set.opacity_logits(i, 0));
  }
  // clones appended after the originals, split children last
  for (std::size_t i = 0; i < n; ++i) {
    if (action[i] != 1) continue;
    const Vec3 ls{set.log_scales(i, 0), set.log_scales(i, 1), set.log_scales(i, 2)};
    push(i, -1, set.position(i), ls, logit(split_opacity(set.opacity(i))));
  }
  for (std::size_t i : split_parents) {
    const Vec3 s = set.scale(i);
    const Mat3 r = quat_to_rotmat(set.rotation(i));
    const Vec3 child_log_s = (s / cfg.split_scale_divisor).array().log();
    for (std::size_t c = 0; c < cfg.split_children; ++c) {
      const Vec3 local{normal(rng) * s.x(), normal(rng) * s.y(), normal(rng) * s.z()};
      push(i, -1, set.position(i) + r * local, child_log_s, set.opacity_logits(i, 0));
    }
    ++result.split;
  }

  // opacity pruning over the densified set
  std::vector<std::size_t> keep;
  std::vector<long> kept_source;
  for (std::size_t r = 0; r < rows_op.size(); ++r) {
    if (sigmoid(rows_op[r][0]) < cfg.min_opacity) {
      ++result.pruned;
      continue;
    }
    keep.push_back(r);
    kept_source.push_back(source[r]);
  }
  if (keep.empty()) throw DegenerateSceneError("densify/prune removed every Gaussian");

  out.resize(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t r = keep[k];
    std::copy(rows_pos[r].begin(), rows_pos[r].end(), out.positions.row(k).begin());
    std::copy(rows_ls[r].begin(), rows_ls[r].end(), out.log_scales.row(k).begin());
    std::copy(rows_rot[r].begin(), rows_rot[r].end(), out.rotations.row(k).begin());
    out.opacity_logits(k, 0) = rows_op[r][0];
    std::copy(rows_f[r].begin(), rows_f[r].end(), out.features.row(k).begin());
  }
  set.positions = std::move(out.positions);
  set.log_scales = std::move(out.log_scales);
  set.rotations = std::move(out.rotations);
  set.opacity_logits = std::move(out.opacity_logits);
  set.features = std::move(out.features);
  set.rebuild_knn();
  stats.reset(set.size());
  result.source = std::move(kept_source);
  return result;
}

}  // namespace gsavatar
