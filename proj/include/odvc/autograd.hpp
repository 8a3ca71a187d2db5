#pragma once

#include "odvc/tensor.hpp"

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

namespace odvc {

namespace detail {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<Scalar>&)> backward;

  void accumulate(const Tensor<Scalar>& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad.matrix() += g.matrix();
    }
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a value in a reverse-mode computation graph. Copies share the
/// underlying node; leaves created with requires_grad are trainable.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<detail::Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
  [[nodiscard]] const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }
  [[nodiscard]] Scalar item() const { return node_->value.item(); }

  /// Seeds d(self)/d(self) = 1 and propagates to every reachable leaf.
  void backward() const {
    if (node_->value.size() != 1) {
      throw std::logic_error("backward() requires a scalar output");
    }
    backward(Tensor<Scalar>::scalar(Scalar(1)));
  }

  void backward(const Tensor<Scalar>& seed) const {
    if (!node_->requires_grad) {
      throw std::logic_error("backward() on a value that does not require grad");
    }
    std::vector<detail::Node<Scalar>*> order;
    std::unordered_set<detail::Node<Scalar>*> seen;
    std::vector<std::pair<detail::Node<Scalar>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node<Scalar>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) {
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<Scalar>* node = *it;
      if (node->backward && !node->grad.empty()) {
        node->backward(node->grad);
        // interior gradients are not needed once propagated
        node->grad = Tensor<Scalar>();
      }
    }
  }

  /// Builds an interior node. `backward` receives d(loss)/d(output) and is
  /// expected to call accumulate() on the inputs that require grad.
  template <typename Fn>
  static Var from_op(Tensor<Scalar> value, std::initializer_list<Var> inputs, Fn&& backward) {
    Var out(std::move(value));
    if (!detail::grad_mode()) return out;
    bool any = false;
    for (const Var& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const Var& in : inputs) {
      if (in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::forward<Fn>(backward);
    return out;
  }

  template <typename Fn>
  static Var from_op(Tensor<Scalar> value, const std::vector<Var>& inputs, Fn&& backward) {
    Var out(std::move(value));
    if (!detail::grad_mode()) return out;
    bool any = false;
    for (const Var& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const Var& in : inputs) {
      if (in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::forward<Fn>(backward);
    return out;
  }

  void accumulate(const Tensor<Scalar>& g) const {
    if (node_->requires_grad) node_->accumulate(g);
  }

  /// Drops the history so the value can be reused as a constant input.
  [[nodiscard]] Var detach() const { return Var(node_->value); }

  [[nodiscard]] const void* id() const { return node_.get(); }

 private:
  std::shared_ptr<detail::Node<Scalar>> node_;
};

}  // namespace odvc
