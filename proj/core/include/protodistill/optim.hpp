#pragma once

#include <vector>

#include "protodistill/tensor.hpp"

namespace protodistill {

// Heavy-ball SGD: v <- momentum * v + g, p <- p - lr * v. Gradients are
// cleared after every step.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum);

  // Throws UsageError when a parameter has no gradient recorded.
  void step();
  void zero_grad();

  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }
  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace protodistill
