#include "sprm/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "sprm/error.hpp"

namespace sprm {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

NdArray::NdArray(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(shape_size(shape), 0.0);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

NdArray::NdArray(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

NdArray NdArray::scalar(double value, bool requires_grad) {
  return NdArray(Shape{1}, std::vector<double>{value}, requires_grad);
}

NdArray NdArray::filled(Shape shape, double value) {
  NdArray out(std::move(shape));
  for (auto& v : out.node_->data) v = value;
  return out;
}

NdArray NdArray::wrap(std::shared_ptr<detail::Node> node) {
  NdArray out;
  out.node_ = std::move(node);
  return out;
}

const Shape& NdArray::shape() const {
  if (!node_) throw UsageError("shape() on an undefined array");
  return node_->shape;
}

std::size_t NdArray::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t NdArray::size() const { return node_ ? node_->data.size() : 0; }

std::span<const double> NdArray::data() const {
  if (!node_) return {};
  return node_->data;
}

std::span<double> NdArray::mutable_data() {
  if (!node_) return {};
  return node_->data;
}

double NdArray::item() const {
  if (size() != 1) throw UsageError("item() needs a single-element array, got " + shape_str(shape()));
  return node_->data[0];
}

bool NdArray::requires_grad() const { return node_ && node_->requires_grad; }

void NdArray::set_requires_grad(bool value) {
  if (!node_) throw UsageError("set_requires_grad on an undefined array");
  node_->requires_grad = value;
}

bool NdArray::is_leaf() const { return node_ && !node_->backward; }

bool NdArray::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const double> NdArray::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::span<double> NdArray::mutable_grad() {
  if (!node_) return {};
  return node_->ensure_grad();
}

void NdArray::zero_grad() {
  if (node_) node_->grad.clear();
}

NdArray NdArray::clone() const {
  if (!node_) return {};
  return NdArray(node_->shape, node_->data, node_->requires_grad);
}

NdArray NdArray::detach() const {
  if (!node_) return {};
  return NdArray(node_->shape, node_->data, false);
}

void NdArray::backward() const {
  if (!node_) throw UsageError("backward() on an undefined array");
  if (node_->data.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(node_->shape));
  }
  Tape::record(*this).run_backward();
}

Tape Tape::record(const NdArray& root) {
  Tape tape;
  tape.root_ = root.node();
  if (!tape.root_) return tape;
  // Iterative post-order DFS; graphs can be thousands of nodes deep.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack;
  stack.emplace_back(tape.root_.get(), 0);
  seen.insert(tape.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const detail::Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::run_backward() {
  if (!root_ || !root_->requires_grad) {
    throw UsageError("backward(): loss does not depend on any value that requires grad");
  }
  root_->ensure_grad();
  for (auto& g : root_->grad) g = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto* node = const_cast<detail::Node*>(*it);
    if (node->backward && node->grad.size() == node->data.size()) node->backward(*node);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void check_finite(const NdArray& array, const std::string& what) {
  for (double v : array.data()) {
    if (!std::isfinite(v)) throw InputError(what + " contains non-finite values");
  }
}

}  // namespace sprm
