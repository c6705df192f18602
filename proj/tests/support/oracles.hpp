#pragma once

// Reference implementations written independently of the library: plain
// nested loops, exhaustive enumeration and central finite differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "protodistill/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

// Direct cross-correlation over [N,Cin,H,W] with kernel [Cout,Cin,k,k].
inline Vec conv2d(const Vec& x, std::size_t N, std::size_t Cin, std::size_t H, std::size_t W, const Vec& w,
                  std::size_t Cout, std::size_t k, const Vec& bias, int stride, int pad, std::size_t& Ho,
                  std::size_t& Wo) {
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  Vec out(N * Cout * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t kh = 0; kh < k; ++kh)
              for (std::size_t kw = 0; kw < k; ++kw) {
                const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(kh);
                const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(kw);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                acc += x[((n * Cin + ci) * H + ih) * W + iw] * w[((co * Cin + ci) * k + kh) * k + kw];
              }
          out[((n * Cout + co) * Ho + oh) * Wo + ow] = acc;
        }
  return out;
}

// Euclidean distance between prototype p and patch (i, j) of one [H,W,d] map.
inline double distance(const Vec& fmap, std::size_t W, std::size_t d, const Vec& protos, std::size_t p,
                       std::size_t i, std::size_t j) {
  double acc = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = fmap[(i * W + j) * d + c] - protos[p * d + c];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

// Nearest patch of prototype p: smallest distance, earliest in row-major
// order among equals. Returns the flat index i*W + j.
inline std::size_t first_nearest(const Vec& fmap, std::size_t H, std::size_t W, std::size_t d, const Vec& protos,
                                 std::size_t p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t idx = H * W; idx-- > 0;) {  // scan backwards, keep ties
    const double dist = distance(fmap, W, d, protos, p, idx / W, idx % W);
    if (dist <= best_d) {
      best_d = dist;
      best = idx;
    }
  }
  return best;
}

// Mask by enumerating every (patch, prototype) pair: patch active iff it is
// some prototype's nearest patch and that distance is within tau.
inline std::vector<std::uint8_t> active_mask(const Vec& fmap, std::size_t H, std::size_t W, std::size_t d,
                                             const Vec& protos, std::size_t m, double tau) {
  std::vector<std::uint8_t> mask(H * W, 0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t p = 0; p < m; ++p) {
        if (first_nearest(fmap, H, W, d, protos, p) != i * W + j) continue;
        if (distance(fmap, W, d, protos, p, i, j) <= tau) mask[i * W + j] = 1;
      }
  return mask;
}

// Brute force over all permutations; returns the best total.
inline double best_assignment(const std::vector<std::vector<double>>& s, bool maximize) {
  std::vector<std::size_t> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < s.size(); ++r) total += s[r][perm[r]];
    best = maximize ? std::max(best, total) : std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double jaccard(const std::set<std::uint64_t>& a, const std::set<std::uint64_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (auto v : a) common += b.count(v);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

// Central differences of a scalar function of one leaf tensor's entries.
inline Vec finite_difference(const std::function<double()>& f, protodistill::Tensor leaf, double h = 1e-6) {
  auto vals = leaf.mutable_values();
  Vec grad(vals.size());
  for (std::size_t k = 0; k < vals.size(); ++k) {
    const double orig = vals[k];
    vals[k] = orig + h;
    const double up = f();
    vals[k] = orig - h;
    const double down = f();
    vals[k] = orig;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
