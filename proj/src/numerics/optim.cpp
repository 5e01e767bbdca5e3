#include "dractrl/numerics/optim.hpp"

#include <cmath>
#include <string>

#include "dractrl/error.hpp"

namespace dractrl {

template <typename T>
OptimizerState<T>::OptimizerState(AdamWSettings s, std::span<const Tensor<T>> params) : settings(s) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.numel(), T(0));
    second_moment.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void adamw_step(OptimizerState<T>& state, std::span<Tensor<T>> params, std::span<const std::vector<T>> grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adamw_step: parameter/gradient/state counts disagree");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].numel() || state.first_moment[p].size() != params[p].numel()) {
      throw DimensionError("adamw_step: gradient " + std::to_string(p) + " shape mismatch");
    }
    check_finite<T>("adamw_step gradient", grads[p]);
  }

  const auto& s = state.settings;
  const std::uint64_t t = state.step + 1;
  const double bias1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T lr = static_cast<T>(s.lr);
  const T decay = static_cast<T>(s.lr * s.weight_decay);
  const T eps = static_cast<T>(s.eps);

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].mutable_values();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / static_cast<T>(bias1);
      const T v_hat = v[i] / static_cast<T>(bias2);
      theta[i] -= decay * theta[i];
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
  state.step = t;
}

template <typename T>
void adamw_step(OptimizerState<T>& state, std::span<Tensor<T>> params) {
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.grad().begin(), p.grad().end());
  adamw_step<T>(state, params, grads);
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step(OptimizerState<float>&, std::span<Tensor<float>>, std::span<const std::vector<float>>);
template void adamw_step(OptimizerState<double>&, std::span<Tensor<double>>, std::span<const std::vector<double>>);
template void adamw_step(OptimizerState<float>&, std::span<Tensor<float>>);
template void adamw_step(OptimizerState<double>&, std::span<Tensor<double>>);

}  // namespace dractrl
