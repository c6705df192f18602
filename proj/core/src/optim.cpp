#include "protodistill/optim.hpp"

#include <utility>

#include "protodistill/errors.hpp"

namespace protodistill {

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) throw UsageError("sgd step on a parameter without a gradient");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& v = velocity_[k];
    const auto g = p.grad();
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      values[i] -= lr_ * v[i];
    }
    p.clear_grad();
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

}  // namespace protodistill
