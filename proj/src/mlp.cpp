#include "gsavatar/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace gsavatar {

Mlp::Mlp(const MlpShape& shape, std::mt19937_64& rng) : shape_(shape) {
  if (shape.inputs <= 0 || shape.outputs <= 0 || shape.hidden_layers < 0 ||
      (shape.hidden_layers > 0 && shape.hidden_width <= 0)) {
    throw std::invalid_argument("invalid MLP shape");
  }
  std::vector<int> dims{shape.inputs};
  for (int i = 0; i < shape.hidden_layers; ++i) dims.push_back(shape.hidden_width);
  dims.push_back(shape.outputs);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto fan_in = static_cast<std::size_t>(dims[l]);
    const auto fan_out = static_cast<std::size_t>(dims[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(fan_out, fan_in);
    Tensor b(fan_out, 1);
    for (auto& v : w.value) v = u(rng);
    for (auto& v : b.value) v = u(rng);
    weights_.push_back(std::move(w));
    biases_.push_back(std::move(b));
  }
}

void Mlp::scale_output_layer(double factor) {
  for (auto& v : weights_.back().value) v *= factor;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, MlpCache* cache) const {
  if (input.rows() != shape_.inputs) throw std::invalid_argument("MLP input size mismatch");
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(weights_.size() + 1);
    cache->activations.push_back(input);
  }
  Eigen::MatrixXd x = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd y = weights_[l].mat() * x;
    y.colwise() += Eigen::Map<const Eigen::VectorXd>(biases_[l].value.data(),
                                                     static_cast<Eigen::Index>(biases_[l].rows));
    if (l + 1 < weights_.size()) y = y.cwiseMax(0.0);
    if (cache) cache->activations.push_back(y);
    x = std::move(y);
  }
  return x;
}

Eigen::MatrixXd Mlp::backward(const MlpCache& cache, const Eigen::MatrixXd& d_output) {
  Eigen::MatrixXd g = d_output;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (l + 1 < weights_.size()) {
      // ReLU mask from this layer's output
      g = g.cwiseProduct((cache.activations[l + 1].array() > 0.0).cast<double>().matrix());
    }
    const Eigen::MatrixXd& in = cache.activations[l];
    weights_[l].grad_mat().noalias() += g * in.transpose();
    Eigen::Map<Eigen::VectorXd>(biases_[l].grad.data(), static_cast<Eigen::Index>(biases_[l].rows)) +=
        g.rowwise().sum();
    g = weights_[l].mat().transpose() * g;
  }
  return g;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

void Mlp::zero_grad() {
  for (auto* t : parameters()) t->zero_grad();
}

}  // namespace gsavatar
