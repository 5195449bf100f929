#pragma once

// Dense row-major parameter tensor with a gradient slot.

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gsavatar {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), value(r * c, fill), grad(r * c, 0.0) {}

  std::size_t size() const { return value.size(); }
  bool empty() const { return value.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return value[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return value[r * cols + c]; }
  double& g(std::size_t r, std::size_t c) { return grad[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {value.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {value.data() + r * cols, cols}; }
  std::span<double> grad_row(std::size_t r) { return {grad.data() + r * cols, cols}; }

  RowMap mat() { return {value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)}; }
  ConstRowMap mat() const {
    return {value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  RowMap grad_mat() { return {grad.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)}; }

  void zero_grad();
  void resize_rows(std::size_t r);
  /// Rebuilds the rows as value[i] = old[src[i]]; grads are cleared.
  void gather_rows(std::span<const std::size_t> src);
};

}  // namespace gsavatar
