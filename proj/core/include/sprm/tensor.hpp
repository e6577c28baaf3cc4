#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sprm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {

// One value in the computation graph. Ops that see at least one input with
// requires_grad (while grad mode is on) keep their inputs alive and store a
// closure that pushes this node's grad into the inputs' grads.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major double-precision array with optional gradient tracking.
///
/// Copies are shallow handles onto the same storage, the same way framework
/// tensors behave; use clone() for an independent copy.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, bool requires_grad = false);
  NdArray(Shape shape, std::vector<double> values, bool requires_grad = false);

  static NdArray scalar(double value, bool requires_grad = false);
  static NdArray filled(Shape shape, double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const;
  /// Direct write access to the values. Not recorded on the tape; intended
  /// for parameter initialization and optimizer updates on leaves.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Independent copy of the values with no graph history.
  NdArray clone() const;
  /// Same as clone() but keeps requires_grad off; the result is a constant.
  NdArray detach() const;

  /// Reverse-mode pass from this scalar. Accumulates into every reachable
  /// node that requires grad.
  void backward() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static NdArray wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the graph behind a root value: every node appears after
/// all of its inputs.
class Tape {
 public:
  static Tape record(const NdArray& root);

  std::size_t size() const { return order_.size(); }
  std::span<const detail::Node* const> nodes() const { return order_; }
  /// Seeds the root grad with 1 and runs every backward closure in reverse order.
  void run_backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<const detail::Node*> order_;
};

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Throws InputError naming `what` if any value is NaN or infinite.
void check_finite(const NdArray& array, const std::string& what);

}  // namespace sprm
