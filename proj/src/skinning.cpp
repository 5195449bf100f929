#include "gsavatar/skinning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gsavatar {

namespace {

std::vector<int> subtree_sizes(const std::vector<int>& order, const std::vector<std::vector<int>>& children) {
  std::vector<int> size(order.size(), 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    for (int c : children[static_cast<std::size_t>(*it)]) size[static_cast<std::size_t>(*it)] += size[static_cast<std::size_t>(c)];
  }
  return size;
}

}  // namespace

HierarchicalSoftmax::HierarchicalSoftmax(const SkinnedTemplate& tmpl)
    : parents_(tmpl.parents()), children_(tmpl.children()), order_(tmpl.topological_order()) {
  const std::size_t b = parents_.size();
  slot_.assign(b, -1);
  gate_.assign(b, -1);
  int next = 1;
  for (std::size_t j = 0; j < b; ++j) {
    if (parents_[j] >= 0) slot_[j] = next++;
  }
  for (std::size_t j = 0; j < b; ++j) {
    if (children_[j].size() < 2) continue;
    gate_[j] = parents_[j] < 0 ? 0 : next++;
  }
  n_logits_ = static_cast<std::size_t>(std::max(next, 1));
}

std::vector<double> HierarchicalSoftmax::uniform_prior_logits() const {
  std::vector<double> o(n_logits_, 0.0);
  const auto size = subtree_sizes(order_, children_);
  for (std::size_t j = 0; j < parents_.size(); ++j) {
    const auto& ch = children_[j];
    if (ch.size() == 1) {
      o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(ch[0])])] = std::log(size[static_cast<std::size_t>(ch[0])]);
    } else if (ch.size() >= 2) {
      o[static_cast<std::size_t>(gate_[j])] = std::log(size[j] - 1);
      for (int c : ch) o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(c)])] = std::log(size[static_cast<std::size_t>(c)]);
    }
  }
  return o;
}

void HierarchicalSoftmax::forward(std::span<const double> o, std::span<double> w) const {
  // w first holds the reach mass, then is reduced to the kept mass
  std::fill(w.begin(), w.end(), 0.0);
  w[static_cast<std::size_t>(order_[0])] = 1.0;
  double soft[64];
  std::vector<double> soft_dyn;
  for (int jj : order_) {
    const auto j = static_cast<std::size_t>(jj);
    const auto& ch = children_[j];
    const double m = w[j];
    if (ch.empty()) continue;
    if (ch.size() == 1) {
      const auto c = static_cast<std::size_t>(ch[0]);
      const double l = o[static_cast<std::size_t>(slot_[c])];
      w[c] = m * sigmoid(l);
      w[j] = m * sigmoid(-l);
      continue;
    }
    double* s = soft;
    if (ch.size() > 64) {
      soft_dyn.resize(ch.size());
      s = soft_dyn.data();
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int c : ch) mx = std::max(mx, o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(c)])]);
    double z = 0.0;
    for (std::size_t k = 0; k < ch.size(); ++k) {
      s[k] = std::exp(o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(ch[k])])] - mx);
      z += s[k];
    }
    const double gl = o[static_cast<std::size_t>(gate_[j])];
    const double down = m * sigmoid(gl);
    for (std::size_t k = 0; k < ch.size(); ++k) w[static_cast<std::size_t>(ch[k])] = down * s[k] / z;
    w[j] = m * sigmoid(-gl);
  }
}

void HierarchicalSoftmax::backward(std::span<const double> o, std::span<const double> dw,
                                   std::span<double> d_o) const {
  const std::size_t b = parents_.size();
  std::fill(d_o.begin(), d_o.end(), 0.0);
  // recompute reach masses
  std::vector<double> reach(b, 0.0);
  reach[static_cast<std::size_t>(order_[0])] = 1.0;
  std::vector<std::vector<double>> soft(b);
  for (int jj : order_) {
    const auto j = static_cast<std::size_t>(jj);
    const auto& ch = children_[j];
    if (ch.size() == 1) {
      const auto c = static_cast<std::size_t>(ch[0]);
      reach[c] = reach[j] * sigmoid(o[static_cast<std::size_t>(slot_[c])]);
    } else if (ch.size() >= 2) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c : ch) mx = std::max(mx, o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(c)])]);
      double z = 0.0;
      soft[j].resize(ch.size());
      for (std::size_t k = 0; k < ch.size(); ++k) {
        soft[j][k] = std::exp(o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(ch[k])])] - mx);
        z += soft[j][k];
      }
      for (auto& v : soft[j]) v /= z;
      const double down = reach[j] * sigmoid(o[static_cast<std::size_t>(gate_[j])]);
      for (std::size_t k = 0; k < ch.size(); ++k) reach[static_cast<std::size_t>(ch[k])] = down * soft[j][k];
    }
  }
  // d_reach[j] = dL/d(mass reaching j)
  std::vector<double> d_reach(b, 0.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto j = static_cast<std::size_t>(*it);
    const auto& ch = children_[j];
    const double m = reach[j];
    if (ch.empty()) {
      d_reach[j] = dw[j];
    } else if (ch.size() == 1) {
      const auto c = static_cast<std::size_t>(ch[0]);
      const double l = o[static_cast<std::size_t>(slot_[c])];
      const double g = sigmoid(l);
      d_o[static_cast<std::size_t>(slot_[c])] += m * (d_reach[c] - dw[j]) * g * (1.0 - g);
      d_reach[j] = dw[j] * (1.0 - g) + g * d_reach[c];
    } else {
      const double gl = o[static_cast<std::size_t>(gate_[j])];
      const double g = sigmoid(gl);
      double mix = 0.0;  // sum_c s_c d_reach_c
      for (std::size_t k = 0; k < ch.size(); ++k) mix += soft[j][k] * d_reach[static_cast<std::size_t>(ch[k])];
      d_o[static_cast<std::size_t>(gate_[j])] += m * (mix - dw[j]) * g * (1.0 - g);
      // softmax: ds_k = m g d_reach_k ; do_k = s_k (ds_k - sum s ds)
      const double scale = m * g;
      for (std::size_t k = 0; k < ch.size(); ++k) {
        const double ds = scale * d_reach[static_cast<std::size_t>(ch[k])];
        d_o[static_cast<std::size_t>(slot_[static_cast<std::size_t>(ch[k])])] += soft[j][k] * (ds - scale * mix);
      }
      d_reach[j] = dw[j] * (1.0 - g) + g * mix;
    }
  }
}

SkinningField::SkinningField(const SkinnedTemplate& tmpl, const SkinningFieldConfig& cfg,
                             std::mt19937_64& rng)
    : softmax_(tmpl), bbox_(tmpl.bbox()) {
  mlp_ = Mlp(MlpShape{3, cfg.hidden_width, cfg.hidden_layers, static_cast<int>(softmax_.logits())}, rng);
  mlp_.scale_output_layer(cfg.output_init_scale);
  const auto prior = softmax_.uniform_prior_logits();
  std::copy(prior.begin(), prior.end(), mlp_.output_bias().value.begin());
}

Eigen::MatrixXd SkinningField::forward(const Eigen::MatrixXd& positions, SkinningCache* cache) const {
  const Eigen::Index n = positions.cols();
  Eigen::MatrixXd input(3, n);
  std::vector<unsigned char> clamped(static_cast<std::size_t>(n), 0);
  std::size_t n_clamped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool c = false;
    input.col(i) = 2.0 * bbox_.normalize(positions.col(i), &c) - Vec3::Ones();
    clamped[static_cast<std::size_t>(i)] = c;
    n_clamped += c;
  }
  clamped_ += n_clamped;
  MlpCache local;
  MlpCache& mc = cache ? cache->mlp : local;
  Eigen::MatrixXd logits = mlp_.forward(input, &mc);
  Eigen::MatrixXd weights(static_cast<Eigen::Index>(bones()), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    softmax_.forward({logits.col(i).data(), static_cast<std::size_t>(logits.rows())},
                     {weights.col(i).data(), bones()});
  }
  if (cache) {
    cache->logits = std::move(logits);
    cache->clamped = std::move(clamped);
  }
  return weights;
}

Eigen::MatrixXd SkinningField::backward(const SkinningCache& cache, const Eigen::MatrixXd& d_weights) {
  const Eigen::Index n = d_weights.cols();
  Eigen::MatrixXd d_logits(cache.logits.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    softmax_.backward({cache.logits.col(i).data(), static_cast<std::size_t>(cache.logits.rows())},
                      {d_weights.col(i).data(), bones()},
                      {d_logits.col(i).data(), static_cast<std::size_t>(d_logits.rows())});
  }
  Eigen::MatrixXd d_input = mlp_.backward(cache.mlp, d_logits);
  const Vec3 scale = 2.0 * bbox_.extent().cwiseInverse();
  Eigen::MatrixXd d_pos(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d_pos.col(i) = cache.clamped[static_cast<std::size_t>(i)]
                       ? Vec3::Zero().eval()
                       : Vec3(d_input.col(i).cwiseProduct(scale));
  }
  return d_pos;
}

std::vector<double> SkinningField::weights_at(const Vec3& p) const {
  Eigen::MatrixXd w = forward(Eigen::MatrixXd(p));
  return {w.data(), w.data() + w.size()};
}

Mat4 lbs_transform(std::span<const double> weights, const BoneTransforms& bones) {
  Mat4 t = Mat4::Zero();
  for (std::size_t b = 0; b < bones.size(); ++b) t += weights[b] * bones[b];
  return t;
}

std::vector<double> lbs_transform_backward(std::span<const double> weights, const BoneTransforms& bones,
                                           const Mat4& d_transform, std::vector<Mat4>& d_bones) {
  std::vector<double> dw(bones.size());
  for (std::size_t b = 0; b < bones.size(); ++b) {
    dw[b] = (d_transform.topRows<3>().array() * bones[b].topRows<3>().array()).sum();
    d_bones[b].topRows<3>() += weights[b] * d_transform.topRows<3>();
  }
  return dw;
}

ObservedGaussian apply_rigid(const Mat4& transform, const Vec3& position, const Mat3& rotation,
                             const Vec3& scale) {
  ObservedGaussian g;
  g.position = transform_point(transform, position);
  g.linear = transform.topLeftCorner<3, 3>() * rotation;
  g.scale = scale;
  g.covariance = covariance_from_linear(g.linear, scale);
  return g;
}

double skinning_loss(SkinningField& field, std::span<const SurfaceSample> samples, double grad_scale) {
  if (samples.empty()) return 0.0;
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto b = static_cast<Eigen::Index>(field.bones());
  Eigen::MatrixXd pos(3, n), gt(b, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pos.col(i) = samples[static_cast<std::size_t>(i)].position;
    gt.col(i) = Eigen::Map<const Eigen::VectorXd>(samples[static_cast<std::size_t>(i)].weights.data(), b);
  }
  SkinningCache cache;
  const Eigen::MatrixXd w = field.forward(pos, grad_scale != 0.0 ? &cache : nullptr);
  const Eigen::MatrixXd diff = w - gt;
  const double loss = diff.squaredNorm() / static_cast<double>(n);
  if (grad_scale != 0.0) {
    field.backward(cache, diff * (2.0 * grad_scale / static_cast<double>(n)));
  }
  return loss;
}

double skinning_loss(SkinningField& field, const SkinnedTemplate& tmpl, std::size_t n_samples,
                     std::mt19937_64& rng, double grad_scale) {
  const auto samples = tmpl.sample_surface(n_samples, rng);
  return skinning_loss(field, samples, grad_scale);
}

}  // namespace gsavatar
