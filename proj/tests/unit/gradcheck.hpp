#pragma once

// Central finite-difference oracle shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dractrl/numerics/tensor.hpp"

namespace dractrl::testing {

// Relative error with a small absolute floor so that entries whose true
// gradient is ~0 are judged on absolute error instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// d loss / d values[index] by central differences with step h.
template <typename T>
double central_difference(Tensor<T>& param, std::size_t index, double h, const std::function<double()>& loss) {
  auto v = param.mutable_values();
  const T original = v[index];
  const T up = static_cast<T>(original + h);
  const T down = static_cast<T>(original - h);
  v[index] = up;
  const double plus = loss();
  v[index] = down;
  const double minus = loss();
  v[index] = original;
  // Divide by the representable step, not the nominal one.
  return (plus - minus) / (static_cast<double>(up) - static_cast<double>(down));
}

}  // namespace dractrl::testing
