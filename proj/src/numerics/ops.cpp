#include "dractrl/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "dractrl/error.hpp"

namespace dractrl {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <typename T>
void require_row_vector(const char* op, const Tensor<T>& v, std::size_t n) {
  if (v.numel() != n) {
    throw DimensionError(std::string(op) + ": row vector " + shape_str(v.shape()) + " vs width " +
                         std::to_string(n));
  }
}

template <typename T>
bool is_blocked(T m) {
  return m <= static_cast<T>(kBlockedScore) * T(0.5);
}

}  // namespace

namespace kernels {

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool transpose_b,
          bool accumulate) {
  ConstMap<T> A(a, m, k);
  Map<T> C(c, m, n);
  if (transpose_b) {
    ConstMap<T> B(b, n, k);
    if (accumulate) C.noalias() += A * B.transpose();
    else C.noalias() = A * B.transpose();
  } else {
    ConstMap<T> B(b, k, n);
    if (accumulate) C.noalias() += A * B;
    else C.noalias() = A * B;
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  ConstMap<T> A(a, k, m);
  ConstMap<T> B(b, k, n);
  Map<T> C(c, m, n);
  if (accumulate) C.noalias() += A.transpose() * B;
  else C.noalias() = A.transpose() * B;
}

template <typename T>
void masked_softmax_rows(const T* scores, const T* mask, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* s = scores + r * cols;
    const T* mk = mask ? mask + r * cols : nullptr;
    T* o = out + r * cols;
    T peak = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mk && is_blocked(mk[c])) continue;
      const T v = s[c] + (mk ? mk[c] : T(0));
      peak = std::max(peak, v);
      any = true;
    }
    if (!any) throw DegenerateRowError("masked_softmax: row " + std::to_string(r) + " is fully blocked");
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mk && is_blocked(mk[c])) {
        o[c] = T(0);
        continue;
      }
      o[c] = std::exp(s[c] + (mk ? mk[c] : T(0)) - peak);
      total += o[c];
    }
    const T inv = T(1) / total;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
}

template <typename T>
void softmax_rows_backward(const T* probs, const T* dprobs, std::size_t rows, std::size_t cols, T* dscores) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = probs + r * cols;
    const T* dp = dprobs + r * cols;
    T dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += p[c] * dp[c];
    T* ds = dscores + r * cols;
    for (std::size_t c = 0; c < cols; ++c) ds[c] += p[c] * (dp[c] - dot);
  }
}

}  // namespace kernels

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_op_result<T>("add", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_op_result<T>("sub", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_op_result<T>("mul", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    const auto& av = *self.parents[0]->values;
    const auto& bv = *self.parents[1]->values;
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_op_result<T>("scale", a.shape(), std::move(out), {a}, [factor](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return mul(a, a);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.at(i);
    out[i] = x / (T(1) + std::exp(-x));
  }
  return make_op_result<T>("silu", a.shape(), std::move(out), {a}, [](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const auto& xv = *self.parents[0]->values;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T sig = T(1) / (T(1) + std::exp(-xv[i]));
        g[i] += self.grad[i] * sig * (T(1) + xv[i] * (T(1) - sig));
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (auto v : a.values()) total += v;
  return make_op_result<T>("sum", {1}, {total}, {a}, [](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const auto n = self.parents[0]->values->size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  kernels::gemm(a.data(), b.data(), out.data(), m, k, n, false, false);
  return make_op_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
    const T* av = self.parents[0]->values->data();
    const T* bv = self.parents[1]->values->data();
    if (T* g = parent_grad(self, 0)) kernels::gemm(self.grad.data(), bv, g, m, n, k, true, true);
    if (T* g = parent_grad(self, 1)) kernels::gemm_tn(av, self.grad.data(), g, k, m, n, true);
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  std::vector<T> out(m * n);
  kernels::gemm(a.data(), b.data(), out.data(), m, k, n, true, false);
  return make_op_result<T>("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& self) {
    const T* av = self.parents[0]->values->data();
    const T* bv = self.parents[1]->values->data();
    if (T* g = parent_grad(self, 0)) kernels::gemm(self.grad.data(), bv, g, m, n, k, false, true);
    if (T* g = parent_grad(self, 1)) kernels::gemm_tn(self.grad.data(), av, g, n, m, k, true);
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  const auto m = a.rows(), n = a.cols();
  require_row_vector("add_row", row, n);
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.at(r * n + c) + row.at(c);
  return make_op_result<T>("add_row", a.shape(), std::move(out), {a, row}, [m, n](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

template <typename T>
Tensor<T> row_scale(const Tensor<T>& a, std::span<const T> scales) {
  const auto m = a.rows(), n = a.cols();
  if (scales.size() != m) {
    throw DimensionError("row_scale: " + std::to_string(scales.size()) + " scales for " + std::to_string(m) +
                         " rows");
  }
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.at(r * n + c) * scales[r];
  std::vector<T> s(scales.begin(), scales.end());
  return make_op_result<T>("row_scale", a.shape(), std::move(out), {a},
                           [m, n, s = std::move(s)](TensorNode<T>& self) {
                             if (T* g = parent_grad(self, 0)) {
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r * n + c] * s[r];
                             }
                           });
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scl) {
  const auto m = x.rows(), n = x.cols();
  require_row_vector("modulate", shift, n);
  require_row_vector("modulate", scl, n);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.at(r * n + c) * (T(1) + scl.at(c)) + shift.at(c);
  return make_op_result<T>("modulate", x.shape(), std::move(out), {x, shift, scl}, [m, n](TensorNode<T>& self) {
    const auto& xv = *self.parents[0]->values;
    const auto& sv = *self.parents[2]->values;
    const auto& gr = self.grad;
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += gr[r * n + c] * (T(1) + sv[c]);
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += gr[r * n + c];
    }
    if (T* g = parent_grad(self, 2)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += gr[r * n + c] * xv[r * n + c];
    }
  });
}

template <typename T>
Tensor<T> gated_add(const Tensor<T>& x, const Tensor<T>& gate, const Tensor<T>& y) {
  require_same_shape("gated_add", x, y);
  const auto m = x.rows(), n = x.cols();
  require_row_vector("gated_add", gate, n);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.at(r * n + c) + gate.at(c) * y.at(r * n + c);
  return make_op_result<T>("gated_add", x.shape(), std::move(out), {x, gate, y}, [m, n](TensorNode<T>& self) {
    const auto& gv = *self.parents[1]->values;
    const auto& yv = *self.parents[2]->values;
    const auto& gr = self.grad;
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < gr.size(); ++i) g[i] += gr[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += gr[r * n + c] * yv[r * n + c];
    }
    if (T* g = parent_grad(self, 2)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += gr[r * n + c] * gv[c];
    }
  });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  const auto m = x.rows(), n = x.cols();
  require_row_vector("rms_norm", gain, n);
  std::vector<T> out(x.numel());
  std::vector<T> inv_rms(m);
  for (std::size_t r = 0; r < m; ++r) {
    T ss = 0;
    for (std::size_t c = 0; c < n; ++c) ss += x.at(r * n + c) * x.at(r * n + c);
    inv_rms[r] = T(1) / std::sqrt(ss / static_cast<T>(n) + eps);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.at(r * n + c) * inv_rms[r] * gain.at(c);
  }
  return make_op_result<T>(
      "rms_norm", x.shape(), std::move(out), {x, gain}, [m, n, inv_rms = std::move(inv_rms)](TensorNode<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& gv = *self.parents[1]->values;
        const auto& gr = self.grad;
        if (T* g = parent_grad(self, 0)) {
          for (std::size_t r = 0; r < m; ++r) {
            // y = x * s * gain with s = (mean(x^2) + eps)^-1/2.
            T dot = 0;
            for (std::size_t c = 0; c < n; ++c) dot += gr[r * n + c] * gv[c] * xv[r * n + c];
            const T s = inv_rms[r];
            const T coeff = s * s * s * dot / static_cast<T>(n);
            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += gr[r * n + c] * gv[c] * s - coeff * xv[r * n + c];
          }
        }
        if (T* g = parent_grad(self, 1)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) g[c] += gr[r * n + c] * xv[r * n + c] * inv_rms[r];
        }
      });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const Tensor<T>& mask) {
  require_same_shape("masked_softmax", scores, mask);
  for (auto v : mask.values()) {
    if (v != T(0) && !(v <= static_cast<T>(kBlockedScore))) {
      throw DomainError("masked_softmax: mask entries must be 0 or the blocking sentinel");
    }
  }
  const auto m = scores.rows(), n = scores.cols();
  std::vector<T> out(scores.numel());
  kernels::masked_softmax_rows(scores.data(), mask.data(), m, n, out.data());
  return make_op_result<T>("masked_softmax", scores.shape(), std::move(out), {scores},
                           [m, n](TensorNode<T>& self) {
                             if (T* g = parent_grad(self, 0)) {
                               // Probabilities are this node's own values.
                               kernels::softmax_rows_backward(self.values->data(), self.grad.data(), m, n, g);
                             }
                           });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const auto n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: width mismatch");
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    off += p.numel();
  }
  return make_op_result<T>("concat_rows", {m, n}, std::move(out), parts,
                           [offsets = std::move(offsets)](TensorNode<T>& self) {
                             for (std::size_t p = 0; p < self.parents.size(); ++p) {
                               if (T* g = parent_grad(self, p)) {
                                 const auto len = self.parents[p]->values->size();
                                 for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offsets[p] + i];
                               }
                             }
                           });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const auto n = a.cols();
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  std::vector<T> out(a.values().begin() + begin * n, a.values().begin() + end * n);
  return make_op_result<T>("slice_rows", {end - begin, n}, std::move(out), {a}, [begin, n](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  const auto vocab = table.rows(), n = table.cols();
  std::vector<T> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(vocab));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * n, n, out.data() + i * n);
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return make_op_result<T>("gather_rows", {ids.size(), n}, std::move(out), {table},
                           [n, idx = std::move(idx)](TensorNode<T>& self) {
                             if (T* g = parent_grad(self, 0)) {
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t c = 0; c < n; ++c)
                                   g[static_cast<std::size_t>(idx[i]) * n + c] += self.grad[i * n + c];
                             }
                           });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  const auto m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("mean_rows: empty input");
  std::vector<T> out(n, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += a.at(r * n + c);
  for (auto& v : out) v /= static_cast<T>(m);
  return make_op_result<T>("mean_rows", {1, n}, std::move(out), {a}, [m, n](TensorNode<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T inv = T(1) / static_cast<T>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c] * inv;
    }
  });
}

template <typename T>
Tensor<T> gaussian(Rng& rng, Shape shape) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return Tensor<T>::from_values(std::move(shape), std::move(v));
}

#define DRACTRL_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                     \
  template Tensor<T> square(const Tensor<T>&);                                                       \
  template Tensor<T> silu(const Tensor<T>&);                                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                          \
  template Tensor<T> mean(const Tensor<T>&);                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> row_scale(const Tensor<T>&, std::span<const T>);                                \
  template Tensor<T> modulate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> gated_add(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);                                \
  template Tensor<T> masked_softmax(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                         \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int32_t>);                   \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                    \
  template Tensor<T> gaussian(Rng&, Shape);                                                          \
  template void kernels::gemm(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool,   \
                              bool);                                                                 \
  template void kernels::gemm_tn(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool); \
  template void kernels::masked_softmax_rows(const T*, const T*, std::size_t, std::size_t, T*);      \
  template void kernels::softmax_rows_backward(const T*, const T*, std::size_t, std::size_t, T*);

DRACTRL_INSTANTIATE_OPS(float)
DRACTRL_INSTANTIATE_OPS(double)

}  // namespace dractrl
