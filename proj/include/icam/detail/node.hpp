#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace icam::detail {

// One vertex of the computation tape. Values are written once at
// construction; grad is the only field mutated afterwards.
struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pulls this node's grad into the parents' grads. Empty for leaves and
  // for nodes built under NoGradGuard.
  std::function<void(Node&)> backprop;

  std::size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace icam::detail
