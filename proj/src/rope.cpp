#include "dractrl/rope.hpp"

#include <cmath>
#include <vector>

#include "dractrl/error.hpp"

namespace dractrl {

void RopeBands::validate() const {
  if (temporal % 2 || height % 2 || width % 2) {
    throw ConfigError("rope: band widths (" + std::to_string(temporal) + ", " + std::to_string(height) + ", " +
                      std::to_string(width) + ") must be even");
  }
}

RopeBands default_rope_bands(std::size_t head_dim) {
  const std::size_t spatial = (head_dim * 3 / 8) & ~std::size_t{1};
  RopeBands b{head_dim - 2 * spatial, spatial, spatial};
  b.validate();
  return b;
}

namespace {

// cos/sin per (token, pair) for one head.
template <typename T>
void rope_tables(std::span<const std::array<double, 3>> coords, const RopeBands& bands, double base,
                 std::vector<T>& cs, std::vector<T>& sn) {
  const std::size_t pairs = bands.total() / 2;
  cs.resize(coords.size() * pairs);
  sn.resize(coords.size() * pairs);
  const std::array<std::size_t, 3> widths{bands.temporal, bands.height, bands.width};
  std::vector<std::pair<int, double>> freq;  // (axis, inverse frequency)
  for (int axis = 0; axis < 3; ++axis) {
    const auto w = widths[static_cast<std::size_t>(axis)];
    for (std::size_t p = 0; p < w / 2; ++p)
      freq.emplace_back(axis, std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(w)));
  }
  for (std::size_t t = 0; t < coords.size(); ++t)
    for (std::size_t p = 0; p < pairs; ++p) {
      const double angle = coords[t][static_cast<std::size_t>(freq[p].first)] * freq[p].second;
      cs[t * pairs + p] = static_cast<T>(std::cos(angle));
      sn[t * pairs + p] = static_cast<T>(std::sin(angle));
    }
}

}  // namespace

template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const std::array<double, 3>> coords, const RopeBands& bands,
                     std::size_t heads, double base) {
  bands.validate();
  const std::size_t n = x.rows(), width = x.cols();
  if (x.rank() != 2 || n != coords.size()) {
    throw DimensionError("apply_rope: " + shape_str(x.shape()) + " for " + std::to_string(coords.size()) + " coords");
  }
  if (heads == 0 || heads * bands.total() != width) {
    throw DimensionError("apply_rope: width " + std::to_string(width) + " != heads * " + std::to_string(bands.total()));
  }
  const std::size_t hd = bands.total(), pairs = hd / 2;
  std::vector<T> cs, sn;
  rope_tables<T>(coords, bands, base, cs, sn);

  std::vector<T> out(x.numel());
  const T* xv = x.data();
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t p = 0; p < pairs; ++p) {
        const std::size_t o = t * width + h * hd + 2 * p;
        const T c = cs[t * pairs + p], s = sn[t * pairs + p];
        out[o] = xv[o] * c - xv[o + 1] * s;
        out[o + 1] = xv[o] * s + xv[o + 1] * c;
      }
  return make_op_result<T>("apply_rope", x.shape(), std::move(out), {x},
                           [n, width, heads, hd, pairs, cs = std::move(cs), sn = std::move(sn)](TensorNode<T>& self) {
                             T* g = parent_grad(self, 0);
                             if (!g) return;
                             const T* gy = self.grad.data();
                             for (std::size_t t = 0; t < n; ++t)
                               for (std::size_t h = 0; h < heads; ++h)
                                 for (std::size_t p = 0; p < pairs; ++p) {
                                   const std::size_t o = t * width + h * hd + 2 * p;
                                   const T c = cs[t * pairs + p], s = sn[t * pairs + p];
                                   g[o] += gy[o] * c + gy[o + 1] * s;
                                   g[o + 1] += -gy[o] * s + gy[o + 1] * c;
                                 }
                           });
}

template Tensor<float> apply_rope(const Tensor<float>&, std::span<const std::array<double, 3>>, const RopeBands&,
                                  std::size_t, double);
template Tensor<double> apply_rope(const Tensor<double>&, std::span<const std::array<double, 3>>, const RopeBands&,
                                   std::size_t, double);

}  // namespace dractrl
