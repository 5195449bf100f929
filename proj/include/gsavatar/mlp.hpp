#pragma once

// Fully connected network with ReLU hidden layers and a linear output,
// evaluated on column batches (features x points) with manual backprop.

#include "gsavatar/tensor.hpp"

#include <Eigen/Core>

#include <random>
#include <string>
#include <vector>

namespace gsavatar {

struct MlpShape {
  int inputs = 0;
  int hidden_width = 0;
  int hidden_layers = 0;
  int outputs = 0;
};

struct MlpCache {
  // activations[l] is the input of layer l; activations.back() is the output
  std::vector<Eigen::MatrixXd> activations;
};

class Mlp {
 public:
  Mlp() = default;
  /// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(const MlpShape& shape, std::mt19937_64& rng);

  const MlpShape& shape() const { return shape_; }
  std::size_t layer_count() const { return weights_.size(); }

  Tensor& weight(std::size_t l) { return weights_[l]; }
  Tensor& bias(std::size_t l) { return biases_[l]; }
  const Tensor& weight(std::size_t l) const { return weights_[l]; }
  const Tensor& bias(std::size_t l) const { return biases_[l]; }
  Tensor& output_weight() { return weights_.back(); }
  Tensor& output_bias() { return biases_.back(); }

  /// Scales the output layer weights (0 gives an exactly constant output).
  void scale_output_layer(double factor);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, MlpCache* cache = nullptr) const;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Eigen::MatrixXd backward(const MlpCache& cache, const Eigen::MatrixXd& d_output);

  std::vector<Tensor*> parameters();
  void zero_grad();

 private:
  MlpShape shape_;
  std::vector<Tensor> weights_;  // out x in
  std::vector<Tensor> biases_;   // out x 1
};

}  // namespace gsavatar
