#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dractrl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Large negative additive mask entry. Finite so masked scores stay finite,
// yet far enough below any attention logit that exp() underflows to zero.
inline constexpr double kBlockedScore = -1e9;

template <typename T>
struct TensorNode {
  Shape shape;
  // Shared so that parameter leaves can be aliased by per-sample graphs.
  std::shared_ptr<std::vector<T>> values;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(TensorNode&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != values->size()) grad.assign(values->size(), T(0));
    return grad;
  }
};

// Dense row-major tensor with reverse-mode autodiff. Copies are shallow
// handles onto the same node; use clone() for a deep value copy.
template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from_values(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return from_values({1}, {value}); }
  // Leaf tensor flagged for gradient accumulation.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->values->size(); }
  // Leading extent for rank-2 tensors; 1 for vectors.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const T> values() const { return *node_->values; }
  std::span<T> mutable_values() { return *node_->values; }
  const T* data() const { return node_->values->data(); }
  T* mutable_data() { return node_->values->data(); }
  T item() const;
  T at(std::size_t flat) const { return (*node_->values)[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  // Zero-filled when no gradient has been accumulated yet.
  std::span<const T> grad() const { return node_->ensure_grad(); }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Value copy with no graph history.
  Tensor clone() const;
  // Same value storage, no history, no grad flag.
  Tensor detach() const;
  // Same value storage with a fresh gradient buffer; keeps requires_grad.
  Tensor alias_leaf() const;
  Tensor reshape(Shape shape) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
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

bool grad_mode_enabled();

// Builds an op result. Verifies every value is finite (throws NumericError
// naming `op`), and records `backward` when any input requires grad.
template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> values,
                         std::vector<Tensor<T>> inputs,
                         std::function<void(TensorNode<T>&)> backward);

// Gradient accumulator for the i-th parent, or nullptr when that parent
// does not take gradients.
template <typename T>
T* parent_grad(TensorNode<T>& node, std::size_t i) {
  auto& parent = *node.parents[i];
  return parent.requires_grad ? parent.ensure_grad().data() : nullptr;
}

// Populates grad on every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate ones are recomputed.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
void check_finite(const char* op, std::span<const T> values);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dractrl
