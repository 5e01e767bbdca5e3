#include "dractrl/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dractrl/error.hpp"

namespace dractrl {
namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_mode_enabled() { return t_grad_enabled; }

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::from_values(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  check_finite<T>("tensor", values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::make_shared<std::vector<T>>(std::move(values));
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  auto t = from_values(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return 1;
  return numel() / s.back();
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s.back();
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return (*node_->values)[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& g = node_->ensure_grad();
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto t = from_values(shape(), *node_->values);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::alias_leaf() const {
  auto t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("reshape: " + shape_str(shape()) + " -> " + shape_str(new_shape));
  }
  std::vector<Tensor<T>> inputs{*this};
  return make_op_result<T>("reshape", std::move(new_shape), *node_->values, std::move(inputs),
                           [](TensorNode<T>& self) {
                             if (T* g = parent_grad(self, 0)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                             }
                           });
}

template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs,
                         std::function<void(TensorNode<T>&)> backward) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(std::string(op) + ": result shape " + shape_str(shape) + " mismatch");
  }
  check_finite<T>(op, values);
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->values = std::make_shared<std::vector<T>>(std::move(values));
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->parents.empty()) {
      auto& g = node->ensure_grad();
      std::fill(g.begin(), g.end(), T(0));
    }
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward) node->backward(*node);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_op_result(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                      std::function<void(TensorNode<float>&)>);
template Tensor<double> make_op_result(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                       std::function<void(TensorNode<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template void check_finite(const char*, std::span<const float>);
template void check_finite(const char*, std::span<const double>);

}  // namespace dractrl
