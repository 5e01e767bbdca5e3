#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dractrl/numerics/tensor.hpp"

namespace dractrl {

struct AdamWSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct OptimizerState {
  AdamWSettings settings;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  OptimizerState() = default;
  OptimizerState(AdamWSettings s, std::span<const Tensor<T>> params);
};

// Decoupled-weight-decay Adam update with bias correction. Every gradient is
// checked before any parameter is touched; a non-finite entry throws
// NumericError and leaves params and state unchanged.
template <typename T>
void adamw_step(OptimizerState<T>& state, std::span<Tensor<T>> params, std::span<const std::vector<T>> grads);

// Same, reading each parameter's accumulated grad.
template <typename T>
void adamw_step(OptimizerState<T>& state, std::span<Tensor<T>> params);

}  // namespace dractrl
