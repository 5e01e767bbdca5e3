#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "dractrl/numerics/tensor.hpp"

namespace dractrl {

// Per-head split of the rotary dims into (temporal, height, width) bands.
struct RopeBands {
  std::size_t temporal = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t total() const { return temporal + height + width; }
  // Throws ConfigError on odd band widths.
  void validate() const;
};

// Spatial bands take 3/8 of the head dim each (rounded down to even), the
// temporal band the rest.
RopeBands default_rope_bands(std::size_t head_dim);

inline constexpr double kRopeBase = 10000.0;

// Rotates interleaved pairs of every head's slice of x [N x heads*head_dim].
// Pair p of a band of width w turns by coord * base^(-2p/w).
template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const std::array<double, 3>> coords, const RopeBands& bands,
                     std::size_t heads = 1, double base = kRopeBase);

}  // namespace dractrl
