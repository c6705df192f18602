#include "protodistill/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "protodistill/errors.hpp"

namespace protodistill {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel_of(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != values.size()) {
    throw DimensionError("tensor shape " + to_string(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("tensor values must be finite");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const detail::Node& Tensor::checked() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return *node_;
}

detail::Node& Tensor::checked() {
  if (!node_) throw UsageError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::values() const { return checked().data; }

std::span<double> Tensor::mutable_values() {
  auto& n = checked();
  if (!n.parents.empty()) throw UsageError("only leaf tensors may be mutated in place");
  return n.data;
}

double Tensor::item() const {
  const auto& n = checked();
  if (n.data.size() != 1) throw UsageError("item() on tensor of shape " + to_string(n.shape));
  return n.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked();
  if (index.size() != n.shape.size()) throw DimensionError("index rank mismatch for " + to_string(n.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw DimensionError("index out of range for " + to_string(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.data[flat];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& n = checked();
  if (!n.parents.empty()) throw UsageError("requires_grad can only be set on leaves");
  n.requires_grad = flag;
}

bool Tensor::is_leaf() const { return checked().parents.empty(); }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const { return checked().grad; }

std::span<double> Tensor::mutable_grad() {
  auto& n = checked();
  n.ensure_grad();
  return n.grad;
}

void Tensor::clear_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), checked().data, false); }

Tensor Tensor::clone() const { return Tensor(shape(), checked().data, requires_grad()); }

void Tensor::backward() const {
  const auto& root = checked();
  if (root.data.size() != 1) throw UsageError("backward() requires a scalar loss, got " + to_string(root.shape));
  if (!root.requires_grad) throw UsageError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    node->backward_fn(*node);
  }
  for (auto* node : order) {
    if (!node->parents.empty()) continue;
    for (double g : node->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient on a leaf tensor");
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

}  // namespace protodistill
