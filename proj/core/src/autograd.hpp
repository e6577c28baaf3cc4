#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "sprm/tensor.hpp"

namespace sprm::detail {

inline bool needs_graph(std::initializer_list<const NdArray*> inputs) {
  if (!grad_enabled()) return false;
  for (const NdArray* in : inputs) {
    if (in && in->requires_grad()) return true;
  }
  return false;
}

/// Builds an op result. The backward closure is kept only when some input
/// requires grad and grad mode is on; it receives the output node and reads
/// inputs from node.inputs in the order given here (undefined inputs are
/// stored as null).
inline NdArray make_result(const char* op, Shape shape, std::vector<double> data,
                           std::initializer_list<const NdArray*> inputs,
                           std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (needs_graph(inputs)) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const NdArray* in : inputs) {
      node->inputs.push_back(in && in->defined() ? in->node() : nullptr);
    }
    node->backward = std::move(backward);
  }
  return NdArray::wrap(std::move(node));
}

/// Grad buffer of input `i`, or null when that input does not take gradients.
inline double* input_grad(Node& self, std::size_t i) {
  auto& in = self.inputs[i];
  if (!in || !in->requires_grad) return nullptr;
  return in->ensure_grad().data();
}

inline const double* input_data(const Node& self, std::size_t i) { return self.inputs[i]->data.data(); }

}  // namespace sprm::detail
