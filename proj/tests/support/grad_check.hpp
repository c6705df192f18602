#pragma once

#include <doctest.h>

#include <functional>
#include <vector>

#include "oracles.hpp"
#include "protodistill/ops.hpp"
#include "protodistill/rng.hpp"

namespace testing_support {

using protodistill::Tensor;

inline Tensor random_tensor(protodistill::Shape shape, protodistill::Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<double> v(protodistill::numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Builds a scalar from the leaves, back-propagates, and compares every leaf
// gradient with central differences. Returns the worst relative error, with
// `abs_floor` guarding entries whose gradient is essentially zero.
inline double worst_grad_error(const std::function<Tensor()>& build, const std::vector<Tensor>& leaves,
                               double h = 1e-4, double abs_floor = 1e-6) {
  for (auto leaf : leaves) leaf.clear_grad();
  build().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const auto fd = oracle::finite_difference(
        [&] {
          protodistill::NoGradGuard guard;
          return build().item();
        },
        leaves[k], h);
    for (std::size_t e = 0; e < fd.size(); ++e) worst = std::max(worst, oracle::rel_err(fd[e], analytic[k][e], abs_floor));
  }
  for (auto leaf : leaves) leaf.clear_grad();
  return worst;
}

// Weighted sum with coefficients fixed by `seed`, so every output entry gets
// a distinct upstream gradient and repeated builds agree.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  protodistill::Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(0.5, 1.5);
  return protodistill::ops::sum(protodistill::ops::mul(y, Tensor(y.shape(), std::move(w))));
}

}  // namespace testing_support
