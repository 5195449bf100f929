#include "gsavatar/tensor.hpp"

#include <algorithm>

namespace gsavatar {

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void Tensor::resize_rows(std::size_t r) {
  rows = r;
  value.resize(r * cols, 0.0);
  grad.assign(r * cols, 0.0);
}

void Tensor::gather_rows(std::span<const std::size_t> src) {
  std::vector<double> out(src.size() * cols);
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy_n(value.begin() + static_cast<std::ptrdiff_t>(src[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  value = std::move(out);
  rows = src.size();
  grad.assign(value.size(), 0.0);
}

}  // namespace gsavatar
