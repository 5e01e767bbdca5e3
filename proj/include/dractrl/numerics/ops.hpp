#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dractrl/numerics/rng.hpp"
#include "dractrl/numerics/tensor.hpp"

namespace dractrl {

// Elementwise; shapes must match exactly.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// [m x k] * [k x n] -> [m x n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [m x k] * [n x k]^T -> [m x n]
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// Adds a length-n row vector to every row of an [m x n] matrix.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
// Multiplies row r of `a` by the constant scales[r].
template <typename T> Tensor<T> row_scale(const Tensor<T>& a, std::span<const T> scales);
// x * (1 + scale) + shift, with shift/scale broadcast over rows.
template <typename T> Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale);
// x + gate * y, with gate broadcast over rows.
template <typename T> Tensor<T> gated_add(const Tensor<T>& x, const Tensor<T>& gate, const Tensor<T>& y);

// Root-mean-square normalization over the last dimension times `gain`.
template <typename T> Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-6));

// Row-wise softmax of scores + mask. Mask entries must be 0 or
// <= kBlockedScore; blocked entries come out as exactly 0 and a row with no
// unblocked entry raises DegenerateRowError. The mask is not differentiated.
template <typename T> Tensor<T> masked_softmax(const Tensor<T>& scores, const Tensor<T>& mask);

template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
// Embedding lookup: row ids[i] of `table` becomes output row i.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids);
// Mean over rows -> [1 x n].
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);

// I.i.d. standard normal samples.
template <typename T> Tensor<T> gaussian(Rng& rng, Shape shape);

namespace kernels {

// out = softmax(scores + mask) row-wise, where `mask` may be null. Blocked
// entries are written as exact zeros.
template <typename T>
void masked_softmax_rows(const T* scores, const T* mask, std::size_t rows, std::size_t cols, T* out);

// dS = P * (dP - rowsum(dP * P)), accumulated into `dscores`.
template <typename T>
void softmax_rows_backward(const T* probs, const T* dprobs, std::size_t rows, std::size_t cols, T* dscores);

// C (+)= A * B or A * B^T on raw row-major buffers, via the GEMM backend.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool transpose_b,
          bool accumulate);
// C (+)= A^T * B with A [k x m], B [k x n].
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

}  // namespace kernels

}  // namespace dractrl
