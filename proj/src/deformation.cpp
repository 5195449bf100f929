#include "gsavatar/deformation.hpp"

#include <cmath>

namespace gsavatar {

PoseEncoder::PoseEncoder(const SkinnedTemplate& tmpl, int dim, std::mt19937_64& rng)
    : parents_(tmpl.parents()),
      order_(tmpl.topological_order()),
      dim_(dim),
      shared_(static_cast<std::size_t>(dim), 4),
      bias_(tmpl.bone_count(), static_cast<std::size_t>(dim)) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : shared_.value) v = u(rng);
  for (auto& v : bias_.value) v = u(rng);
}

namespace {

struct EncoderState {
  std::vector<Vec4> unit;
  std::vector<Eigen::VectorXd> act;    // tanh outputs
  std::vector<Eigen::VectorXd> accum;  // a_j
};

}  // namespace

static EncoderState run_encoder(const PoseParams& pose, const Tensor& shared, const Tensor& bias,
                                const std::vector<int>& parents, const std::vector<int>& order, int dim) {
  const std::size_t b = parents.size();
  EncoderState s;
  s.unit.resize(b);
  s.act.resize(b);
  s.accum.resize(b);
  const auto a = shared.mat();
  for (int j : order) {
    const auto ju = static_cast<std::size_t>(j);
    s.unit[ju] = pose.local_rotations[ju].normalized().as_vec();
    Eigen::VectorXd pre = a * s.unit[ju];
    for (int d = 0; d < dim; ++d) pre[d] += bias(ju, static_cast<std::size_t>(d));
    s.act[ju] = pre.array().tanh();
    s.accum[ju] = s.act[ju];
    if (parents[ju] >= 0) s.accum[ju] += s.accum[static_cast<std::size_t>(parents[ju])];
  }
  return s;
}

Eigen::VectorXd PoseEncoder::forward(const PoseParams& pose) const {
  const EncoderState s = run_encoder(pose, shared_, bias_, parents_, order_, dim_);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(dim_);
  for (const auto& a : s.accum) z += a;
  return z / static_cast<double>(parents_.size());
}

std::vector<Quat> PoseEncoder::backward(const PoseParams& pose, const Eigen::VectorXd& d_latent) {
  const std::size_t b = parents_.size();
  const EncoderState s = run_encoder(pose, shared_, bias_, parents_, order_, dim_);
  std::vector<Eigen::VectorXd> d_accum(b, d_latent / static_cast<double>(b));
  std::vector<Quat> d_local(b, Quat{0, 0, 0, 0});
  auto ga = shared_.grad_mat();
  const auto a = shared_.mat();
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto j = static_cast<std::size_t>(*it);
    if (parents_[j] >= 0) d_accum[static_cast<std::size_t>(parents_[j])] += d_accum[j];
    const Eigen::VectorXd d_pre = d_accum[j].array() * (1.0 - s.act[j].array().square());
    ga += d_pre * s.unit[j].transpose();
    for (int d = 0; d < dim_; ++d) bias_.g(j, static_cast<std::size_t>(d)) += d_pre[d];
    const Vec4 d_unit = a.transpose() * d_pre;
    d_local[j] = normalize_backward(pose.local_rotations[j], Quat::from_vec(d_unit));
  }
  return d_local;
}

NonRigidField::NonRigidField(const SkinnedTemplate& tmpl, const NonRigidConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg), bbox_(tmpl.bbox()), grid_(cfg.hashgrid, rng), encoder_(tmpl, cfg.pose_dim, rng) {
  MlpShape shape;
  shape.inputs = grid_.output_dim() + cfg.pose_dim;
  shape.hidden_width = cfg.width;
  shape.hidden_layers = cfg.depth;
  shape.outputs = kNonRigidOutputs;
  mlp_ = Mlp(shape, rng);
  mlp_.scale_output_layer(0.0);
  std::fill(mlp_.output_bias().value.begin(), mlp_.output_bias().value.end(), 0.0);
}

Eigen::MatrixXd NonRigidField::forward(const Eigen::MatrixXd& positions, const PoseParams& pose,
                                       NonRigidCache* cache) const {
  const Eigen::Index n = positions.cols();
  const int enc_dim = grid_.output_dim();
  Eigen::MatrixXd input(enc_dim + cfg_.pose_dim, n);
  Eigen::MatrixXd normalized(3, n);
  std::vector<unsigned char> clamped(static_cast<std::size_t>(n), 0);
  const Eigen::VectorXd latent = encoder_.forward(pose);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool c = false;
    const Vec3 u = bbox_.normalize(positions.col(i), &c);
    normalized.col(i) = u;
    clamped[static_cast<std::size_t>(i)] = c;
    grid_.encode(u, {input.col(i).data(), static_cast<std::size_t>(enc_dim)});
    input.col(i).tail(cfg_.pose_dim) = latent;
  }
  MlpCache local;
  Eigen::MatrixXd out = mlp_.forward(input, cache ? &cache->mlp : &local);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->clamped = std::move(clamped);
  }
  return out;
}

NonRigidGrad NonRigidField::backward(const NonRigidCache& cache, const PoseParams& pose,
                                     const Eigen::MatrixXd& d_out) {
  const Eigen::Index n = d_out.cols();
  const int enc_dim = grid_.output_dim();
  const Eigen::MatrixXd d_input = mlp_.backward(cache.mlp, d_out);
  NonRigidGrad g;
  g.d_positions.resize(3, n);
  const Vec3 inv_extent = bbox_.extent().cwiseInverse();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 dn = grid_.backward(cache.normalized.col(i), {d_input.col(i).data(), static_cast<std::size_t>(enc_dim)});
    g.d_positions.col(i) = cache.clamped[static_cast<std::size_t>(i)] ? Vec3::Zero().eval()
                                                                      : Vec3(dn.cwiseProduct(inv_extent));
  }
  const Eigen::VectorXd d_latent = d_input.bottomRows(cfg_.pose_dim).rowwise().sum();
  g.d_local_rotations = encoder_.backward(pose, d_latent);
  return g;
}

DeformedGaussian deform_gaussian(const Vec3& position, const Vec3& log_scale, const Quat& rotation,
                                 const Vec3& d_position, const Vec3& d_log_scale, const Vec3& d_rotation) {
  const Quat delta{1.0, d_rotation.x(), d_rotation.y(), d_rotation.z()};
  return {position + d_position, log_scale + d_log_scale, quat_mul(rotation.normalized(), delta.normalized())};
}

DeformGrad deform_gaussian_backward(const Quat& rotation, const Vec3& d_rotation, const Vec3& g_position,
                                    const Vec3& g_log_scale, const Quat& g_rotation) {
  const Quat delta{1.0, d_rotation.x(), d_rotation.y(), d_rotation.z()};
  const Quat qn = rotation.normalized();
  const Quat dn = delta.normalized();
  const auto [g_qn, g_dn] = quat_mul_backward(qn, dn, g_rotation);
  const Quat g_q = normalize_backward(rotation, g_qn);
  const Quat g_delta = normalize_backward(delta, g_dn);
  DeformGrad g;
  g.position = g_position;
  g.log_scale = g_log_scale;
  g.rotation = g_q;
  g.d_position = g_position;
  g.d_log_scale = g_log_scale;
  g.d_rotation = {g_delta.x, g_delta.y, g_delta.z};
  return g;
}

}  // namespace gsavatar
