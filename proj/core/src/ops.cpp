#include "protodistill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "protodistill/errors.hpp"

namespace protodistill::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(Node&)>;

void require_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
  }
}

// Wraps a freshly computed buffer into a tensor and, when any input requires
// grad and recording is on, attaches the backward rule.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs, const char* op,
                   Backward backward) {
  require_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

// Parent i of an op node, or nullptr when it does not take gradients.
Node* grad_target(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined input tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  require_defined(x, op);
  const auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, op, [deriv](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i] * deriv(px->data[i], self.data[i]);
  });
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const Shape out_shape = same ? a.shape() : (a_scalar ? b.shape() : a.shape());
  const std::size_t n = numel_of(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t sa = (a.numel() == n) ? 1 : 0;  // stride 0 broadcasts the scalar
  const std::size_t sb = (b.numel() == n) ? 1 : 0;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i * sa];
    const double y = bv[i * sb];
    out[i] = kind == BinaryKind::add ? x + y : kind == BinaryKind::sub ? x - y : x * y;
  }
  return make_result(out_shape, std::move(out), {a, b}, op, [kind, sa, sb](Node& self) {
    Node* pa = grad_target(self, 0);
    Node* pb = grad_target(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (pa) {
        const double d = kind == BinaryKind::mul ? self.parents[1]->data[i * sb] : 1.0;
        pa->grad[i * sa] += g * d;
      }
      if (pb) {
        const double d = kind == BinaryKind::mul ? self.parents[0]->data[i * sa] : (kind == BinaryKind::sub ? -1.0 : 1.0);
        pb->grad[i * sb] += g * d;
      }
    }
  });
}

// Output index range [lo, hi) whose input coordinate o*stride - pad + offset
// lies inside [0, extent).
std::pair<int, int> valid_range(int extent, int out_extent, int stride, int pad, int offset) {
  const int shift = pad - offset;
  const int lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const int last = extent - 1 + pad - offset;
  const int hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad) {
  constexpr const char* op = "conv2d";
  require_rank(input, 4, op);
  require_rank(kernel, 4, op);
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (pad < 0) throw DimensionError("conv2d: pad must be >= 0");
  const int N = static_cast<int>(input.dim(0));
  const int Cin = static_cast<int>(input.dim(1));
  const int H = static_cast<int>(input.dim(2));
  const int W = static_cast<int>(input.dim(3));
  const int Cout = static_cast<int>(kernel.dim(0));
  const int K = static_cast<int>(kernel.dim(2));
  if (static_cast<int>(kernel.dim(1)) != Cin || static_cast<int>(kernel.dim(3)) != K) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " incompatible with input " +
                         to_string(input.shape()));
  }
  if (K > H + 2 * pad || K > W + 2 * pad) throw DimensionError("conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || static_cast<int>(bias.dim(0)) != Cout)) {
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(Cout) + "]");
  }
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (W + 2 * pad - K) / stride + 1;

  const double* in = input.values().data();
  const double* w = kernel.values().data();
  std::vector<double> out(static_cast<std::size_t>(N) * Cout * OH * OW, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      double* out_plane = out.data() + (static_cast<std::size_t>(n) * Cout + co) * OH * OW;
      if (has_bias) std::fill(out_plane, out_plane + OH * OW, bias.values()[co]);
      for (int ci = 0; ci < Cin; ++ci) {
        const double* in_plane = in + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
        for (int kh = 0; kh < K; ++kh) {
          const auto [oh_lo, oh_hi] = valid_range(H, OH, stride, pad, kh);
          for (int kw = 0; kw < K; ++kw) {
            const double wv = w[((static_cast<std::size_t>(co) * Cin + ci) * K + kh) * K + kw];
            const auto [ow_lo, ow_hi] = valid_range(W, OW, stride, pad, kw);
            const int span = ow_hi - ow_lo;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const double* in_row = in_plane + (oh * stride - pad + kh) * W + (ow_lo * stride - pad + kw);
              double* out_row = out_plane + oh * OW + ow_lo;
              for (int t = 0; t < span; ++t) out_row[t] += wv * in_row[t * stride];
            }
          }
        }
      }
    }
  }

  Shape out_shape{static_cast<std::size_t>(N), static_cast<std::size_t>(Cout), static_cast<std::size_t>(OH),
                  static_cast<std::size_t>(OW)};
  auto backward = [=](Node& self) {
    Node* pin = grad_target(self, 0);
    Node* pk = grad_target(self, 1);
    Node* pb = has_bias ? grad_target(self, 2) : nullptr;
    const double* x = self.parents[0]->data.data();
    const double* kv = self.parents[1]->data.data();
    const double* g = self.grad.data();
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Cout; ++co) {
        const double* g_plane = g + (static_cast<std::size_t>(n) * Cout + co) * OH * OW;
        if (pb) {
          double acc = 0.0;
          for (int i = 0; i < OH * OW; ++i) acc += g_plane[i];
          pb->grad[co] += acc;
        }
        for (int ci = 0; ci < Cin; ++ci) {
          const std::size_t in_off = (static_cast<std::size_t>(n) * Cin + ci) * H * W;
          for (int kh = 0; kh < K; ++kh) {
            const auto [oh_lo, oh_hi] = valid_range(H, OH, stride, pad, kh);
            for (int kw = 0; kw < K; ++kw) {
              const std::size_t widx = ((static_cast<std::size_t>(co) * Cin + ci) * K + kh) * K + kw;
              const auto [ow_lo, ow_hi] = valid_range(W, OW, stride, pad, kw);
              const double wv = kv[widx];
              const int span = ow_hi - ow_lo;
              double wacc = 0.0;
              for (int oh = oh_lo; oh < oh_hi; ++oh) {
                const std::size_t row = in_off + (oh * stride - pad + kh) * W + (ow_lo * stride - pad + kw);
                const double* g_row = g_plane + oh * OW + ow_lo;
                if (pk) {
                  const double* x_row = x + row;
                  for (int t = 0; t < span; ++t) wacc += g_row[t] * x_row[t * stride];
                }
                if (pin) {
                  double* gi_row = pin->grad.data() + row;
                  for (int t = 0; t < span; ++t) gi_row[t * stride] += wv * g_row[t];
                }
              }
              if (pk) pk->grad[widx] += wacc;
            }
          }
        }
      }
    }
  };
  if (has_bias) return make_result(std::move(out_shape), std::move(out), {input, kernel, bias}, op, backward);
  return make_result(std::move(out_shape), std::move(out), {input, kernel}, op, backward);
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor sqrt(const Tensor& x) {
  require_defined(x, "sqrt");
  for (double v : x.values()) {
    if (v < 0.0) throw DomainError("sqrt of a negative value");
  }
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double out) { return out > 0.0 ? 0.5 / out : 0.0; });
}

Tensor log_similarity(const Tensor& x, double eps) {
  require_defined(x, "log_similarity");
  if (!(eps > 0.0)) throw DomainError("log_similarity: eps must be positive");
  for (double v : x.values()) {
    if (v < 0.0) throw DomainError("log_similarity: negative squared distance");
  }
  return unary(
      x, "log_similarity", [eps](double v) { return std::log((v + 1.0) / (v + eps)); },
      [eps](double in, double) { return 1.0 / (in + 1.0) - 1.0 / (in + eps); });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result({}, {acc}, {x}, "sum", [](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (double& g : px->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor slice_norms(const Tensor& x) {
  require_defined(x, "slice_norms");
  if (x.rank() < 1) throw DimensionError("slice_norms: expected rank >= 1");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  const auto xv = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < width; ++k) acc += xv[r * width + k] * xv[r * width + k];
    out[r] = std::sqrt(acc);
  }
  return make_result({rows}, std::move(out), {x}, "slice_norms", [width](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t r = 0; r < self.data.size(); ++r) {
      const double norm = self.data[r];
      if (norm == 0.0) continue;
      const double coef = self.grad[r] / norm;
      for (std::size_t k = 0; k < width; ++k) px->grad[r * width + k] += coef * px->data[r * width + k];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape", [](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
  });
}

Tensor to_channels_last(const Tensor& x) {
  require_rank(x, 4, "to_channels_last");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) out[((n * H + h) * W + w) * C + c] = xv[((n * C + c) * H + h) * W + w];
  return make_result({N, H, W, C}, std::move(out), {x}, "to_channels_last", [=](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            px->grad[((n * C + c) * H + h) * W + w] += self.grad[((n * H + h) * W + w) * C + c];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined(x, "gather_rows");
  if (x.rank() < 1) throw DimensionError("gather_rows: expected rank >= 1");
  const std::size_t total = x.dim(0);
  const std::size_t width = total == 0 ? 0 : x.numel() / total;
  const auto xv = x.values();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  std::vector<double> out(picked.size() * width);
  for (std::size_t r = 0; r < picked.size(); ++r) {
    if (picked[r] >= total) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(picked[r] * width), width, out.begin() + r * width);
  }
  Shape shape = x.shape();
  shape[0] = picked.size();
  return make_result(std::move(shape), std::move(out), {x}, "gather_rows", [picked, width](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t r = 0; r < picked.size(); ++r)
      for (std::size_t k = 0; k < width; ++k) px->grad[picked[r] * width + k] += self.grad[r * width + k];
  });
}

Tensor patch_sq_distances(const Tensor& fmap, const Tensor& prototypes) {
  constexpr const char* op = "patch_sq_distances";
  require_rank(fmap, 4, op);
  require_rank(prototypes, 2, op);
  const std::size_t N = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2), D = fmap.dim(3);
  const std::size_t M = prototypes.dim(0);
  if (prototypes.dim(1) != D) {
    throw DimensionError("patch distances: prototype depth " + std::to_string(prototypes.dim(1)) +
                         " != feature depth " + std::to_string(D));
  }
  const auto f = fmap.values();
  const auto p = prototypes.values();
  const std::size_t HW = H * W;
  std::vector<double> out(N * M * HW);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t s = 0; s < HW; ++s) {
        const double* fv = f.data() + (n * HW + s) * D;
        const double* pv = p.data() + m * D;
        double acc = 0.0;
        for (std::size_t k = 0; k < D; ++k) {
          const double diff = fv[k] - pv[k];
          acc += diff * diff;
        }
        out[(n * M + m) * HW + s] = acc;
      }
  return make_result({N, M, H, W}, std::move(out), {fmap, prototypes}, op, [=](Node& self) {
    Node* pf = grad_target(self, 0);
    Node* pp = grad_target(self, 1);
    const double* fv_all = self.parents[0]->data.data();
    const double* pv_all = self.parents[1]->data.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t s = 0; s < HW; ++s) {
          const double g = self.grad[(n * M + m) * HW + s];
          if (g == 0.0) continue;
          const double* fv = fv_all + (n * HW + s) * D;
          const double* pv = pv_all + m * D;
          for (std::size_t k = 0; k < D; ++k) {
            const double d2 = 2.0 * g * (fv[k] - pv[k]);
            if (pf) pf->grad[(n * HW + s) * D + k] += d2;
            if (pp) pp->grad[m * D + k] -= d2;
          }
        }
  });
}

Tensor patch_distances(const Tensor& fmap, const Tensor& prototypes) {
  return sqrt(patch_sq_distances(fmap, prototypes));
}

std::vector<std::size_t> argmin_spatial(const Tensor& x) {
  require_rank(x, 4, "argmin_spatial");
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t HW = x.dim(2) * x.dim(3);
  if (HW == 0) throw DimensionError("argmin over an empty spatial grid");
  const auto xv = x.values();
  std::vector<std::size_t> idx(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < HW; ++s) {
      if (xv[r * HW + s] < xv[r * HW + best]) best = s;
    }
    idx[r] = best;
  }
  return idx;
}

Tensor min_spatial(const Tensor& x) {
  auto idx = argmin_spatial(x);
  const std::size_t HW = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  std::vector<double> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = xv[r * HW + idx[r]];
  return make_result({x.dim(0), x.dim(1)}, std::move(out), {x}, "min_spatial", [idx, HW](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t r = 0; r < idx.size(); ++r) px->grad[r * HW + idx[r]] += self.grad[r];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t N = a.dim(0), K = a.dim(1), M = b.dim(1);
  if (b.dim(0) != K) {
    throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(N * M, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      const double x = av[n * K + k];
      for (std::size_t m = 0; m < M; ++m) out[n * M + m] += x * bv[k * M + m];
    }
  return make_result({N, M}, std::move(out), {a, b}, "matmul", [=](Node& self) {
    Node* pa = grad_target(self, 0);
    Node* pb = grad_target(self, 1);
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
          const double g = self.grad[n * M + m];
          acc += g * B[k * M + m];
          if (pb) pb->grad[k * M + m] += A[n * K + k] * g;
        }
        if (pa) pa->grad[n * K + k] += acc;
      }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) throw DimensionError("cross_entropy: label count does not match batch");
  if (N == 0) throw DimensionError("cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw DataError("invalid class label " + std::to_string(y));
  }
  const auto z = logits.values();
  std::vector<double> probs(N * C);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = z.data() + n * C;
    const double zmax = *std::max_element(row, row + C);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(row[c] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < C; ++c) probs[n * C + c] = std::exp(row[c] - zmax - log_denom);
    total -= row[labels[n]] - zmax - log_denom;
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<double>(N)}, {logits}, "cross_entropy",
                     [probs = std::move(probs), ys = std::move(ys), N, C](Node& self) {
                       Node* pz = grad_target(self, 0);
                       if (!pz) return;
                       const double g = self.grad[0] / static_cast<double>(N);
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t c = 0; c < C; ++c) {
                           const double target = static_cast<int>(c) == ys[n] ? 1.0 : 0.0;
                           pz->grad[n * C + c] += g * (probs[n * C + c] - target);
                         }
                     });
}

Tensor masked_min(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_rank(x, 2, "masked_min");
  const std::size_t N = x.dim(0), K = x.dim(1);
  if (mask.size() != N * K) throw DimensionError("masked_min: mask size does not match input");
  const auto xv = x.values();
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> idx(N, none);
  std::vector<double> out(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      if (!mask[n * K + k]) continue;
      if (idx[n] == none || xv[n * K + k] < xv[n * K + idx[n]]) idx[n] = k;
    }
    if (idx[n] != none) out[n] = xv[n * K + idx[n]];
  }
  return make_result({N}, std::move(out), {x}, "masked_min", [idx, K](Node& self) {
    Node* px = grad_target(self, 0);
    if (!px) return;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      if (idx[n] != none) px->grad[n * K + idx[n]] += self.grad[n];
    }
  });
}

}  // namespace protodistill::ops
