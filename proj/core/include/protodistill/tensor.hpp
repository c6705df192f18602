#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protodistill {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode graph. Leaves have no parents and no
// backward rule; op outputs own references to their inputs.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grads.
  std::function<void(Node& self)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major float64 array with an optional gradient record.
//
// Copies are shallow: two Tensor handles may refer to the same storage, which
// is how parameters are shared between a model and its optimizer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writable view of the storage. Only leaves may be mutated; mutating an
  // op output would silently desynchronize the recorded graph.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void clear_grad();

  // Fresh leaf holding a copy of the values; never requires grad.
  Tensor detach() const;
  // Fresh leaf holding a copy of the values with the same requires_grad flag.
  Tensor clone() const;

  // Reverse-mode sweep from this scalar. Every node reachable through
  // requires_grad edges is visited exactly once, in reverse topological order.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  const detail::Node& checked() const;
  detail::Node& checked();

  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

}  // namespace protodistill
