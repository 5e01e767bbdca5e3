#include "dractrl/model.hpp"

#include <algorithm>
#include <cmath>

#include "dractrl/error.hpp"
#include "dractrl/numerics/ops.hpp"

namespace dractrl {

template <typename T>
Tensor<T> lora_apply(const Linear<T>& layer, const Tensor<T>& x, std::span<const T> row_scales) {
  auto y = matmul_nt(x, layer.w);
  if (layer.b.defined()) y = add_row(y, layer.b);
  const std::size_t r = layer.rank();
  if (r == 0 || row_scales.empty()) return y;
  if (layer.lora_a.shape() != Shape{r, layer.in_dim()} || layer.lora_b.shape() != Shape{layer.out_dim(), r}) {
    throw ConfigError("lora: adapter shapes " + shape_str(layer.lora_a.shape()) + ", " +
                      shape_str(layer.lora_b.shape()) + " do not fit a " + std::to_string(layer.out_dim()) + "x" +
                      std::to_string(layer.in_dim()) + " layer");
  }
  if (std::all_of(row_scales.begin(), row_scales.end(), [](T s) { return s == T(0); })) return y;
  auto delta = matmul_nt(matmul_nt(x, layer.lora_a), layer.lora_b);
  return add(y, row_scale(delta, row_scales));
}

template <typename T>
std::vector<T> segment_scales(const TokenLayout& layout, const ModelConfig& config, std::size_t rows) {
  if (rows > layout.size()) throw DimensionError("segment_scales: more rows than tokens");
  std::vector<T> s(rows);
  for (std::size_t p = 0; p < rows; ++p)
    s[p] = static_cast<T>(config.lora_scales[static_cast<std::size_t>(layout.segment_of[p])]);
  return s;
}

namespace {

template <typename T>
Tensor<T> normal_param(Rng& rng, Shape shape, double stddev) {
  auto t = gaussian<T>(rng, std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<T>(v * stddev);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> const_param(Shape shape, T value) {
  auto t = Tensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Linear<T> make_linear(Rng& rng, std::size_t in, std::size_t out, bool zero) {
  Linear<T> l;
  l.w = zero ? const_param<T>({out, in}, T(0)) : normal_param<T>(rng, {out, in}, 1.0 / std::sqrt(double(in)));
  l.b = const_param<T>({1, out}, T(0));
  return l;
}

template <typename T>
void add_adapter(Linear<T>& l, std::size_t rank, Rng& rng) {
  if (rank == 0) {
    l.lora_a = Tensor<T>();
    l.lora_b = Tensor<T>();
    return;
  }
  l.lora_a = normal_param<T>(rng, {rank, l.in_dim()}, 1.0 / std::sqrt(double(l.in_dim())));
  l.lora_b = const_param<T>({l.out_dim(), rank}, T(0));
}

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  if (!t.defined()) return {};
  auto v = t.values();
  std::vector<To> out(v.begin(), v.end());
  auto r = Tensor<To>::from_values(t.shape(), std::move(out));
  r.set_requires_grad(t.requires_grad());
  return r;
}

template <typename To, typename From>
Linear<To> cast_linear(const Linear<From>& l) {
  return {cast_tensor<To>(l.w), cast_tensor<To>(l.b), cast_tensor<To>(l.lora_a), cast_tensor<To>(l.lora_b)};
}

}  // namespace

template <typename T>
ModelWeights<T> init_weights(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim, h = config.mlp_hidden;
  ModelWeights<T> w;
  w.patch_in = make_linear<T>(rng, config.channels, d, false);
  w.text_table = normal_param<T>(rng, {config.resolved_vocab(), d}, 0.5);
  w.time1 = make_linear<T>(rng, d, d, false);
  w.time2 = make_linear<T>(rng, d, d, false);
  w.text_proj = make_linear<T>(rng, d, d, false);
  w.blocks.resize(config.layers);
  for (auto& b : w.blocks) {
    b.norm1 = const_param<T>({1, d}, T(1));
    b.norm2 = const_param<T>({1, d}, T(1));
    b.q = make_linear<T>(rng, d, d, false);
    b.k = make_linear<T>(rng, d, d, false);
    b.v = make_linear<T>(rng, d, d, false);
    b.o = make_linear<T>(rng, d, d, false);
    b.w1 = make_linear<T>(rng, d, h, false);
    b.w3 = make_linear<T>(rng, d, h, false);
    b.w2 = make_linear<T>(rng, h, d, false);
    b.ada = make_linear<T>(rng, d, 6 * d, true);
  }
  w.final_norm = const_param<T>({1, d}, T(1));
  w.final_ada = make_linear<T>(rng, d, 2 * d, true);
  w.final_out = make_linear<T>(rng, d, config.channels, true);
  return w;
}

template <typename T>
void attach_adapters(ModelWeights<T>& w, const ModelConfig& config, Rng& rng) {
  const std::size_t r = config.lora_rank;
  add_adapter(w.patch_in, r, rng);
  for (auto& b : w.blocks)
    for (auto* l : {&b.q, &b.k, &b.v, &b.o, &b.w1, &b.w3, &b.w2}) add_adapter(*l, r, rng);
  add_adapter(w.final_out, r, rng);
}

template <typename T>
void set_trainable(ModelWeights<T>& w, TrainScope scope) {
  w.visit([scope](const std::string&, Tensor<T>& t, bool adapter) {
    bool on = false;
    switch (scope) {
      case TrainScope::base: on = !adapter; break;
      case TrainScope::adapters: on = adapter; break;
      case TrainScope::all: on = true; break;
      case TrainScope::none: on = false; break;
    }
    t.set_requires_grad(on);
  });
}

template <typename T>
ModelWeights<T> alias_weights(const ModelWeights<T>& w) {
  ModelWeights<T> out = w;
  out.visit([](const std::string&, Tensor<T>& t, bool) { t = t.alias_leaf(); });
  return out;
}

template <typename T>
ModelWeights<T> clone_weights(const ModelWeights<T>& w) {
  ModelWeights<T> out = w;
  out.visit([](const std::string&, Tensor<T>& t, bool) {
    const bool flag = t.requires_grad();
    t = t.clone();
    t.set_requires_grad(flag);
  });
  return out;
}

template <typename To, typename From>
ModelWeights<To> cast_weights(const ModelWeights<From>& w) {
  ModelWeights<To> out;
  out.patch_in = cast_linear<To>(w.patch_in);
  out.text_table = cast_tensor<To>(w.text_table);
  out.time1 = cast_linear<To>(w.time1);
  out.time2 = cast_linear<To>(w.time2);
  out.text_proj = cast_linear<To>(w.text_proj);
  for (const auto& b : w.blocks) {
    Block<To> c;
    c.norm1 = cast_tensor<To>(b.norm1);
    c.norm2 = cast_tensor<To>(b.norm2);
    c.q = cast_linear<To>(b.q);
    c.k = cast_linear<To>(b.k);
    c.v = cast_linear<To>(b.v);
    c.o = cast_linear<To>(b.o);
    c.w1 = cast_linear<To>(b.w1);
    c.w3 = cast_linear<To>(b.w3);
    c.w2 = cast_linear<To>(b.w2);
    c.ada = cast_linear<To>(b.ada);
    out.blocks.push_back(std::move(c));
  }
  out.final_norm = cast_tensor<To>(w.final_norm);
  out.final_ada = cast_linear<To>(w.final_ada);
  out.final_out = cast_linear<To>(w.final_out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> collect_trainable(ModelWeights<T>& w) {
  std::vector<Tensor<T>> out;
  w.visit([&out](const std::string&, Tensor<T>& t, bool) {
    if (t.requires_grad()) out.push_back(t);
  });
  return out;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::span<const T> mask,
                    std::size_t heads, const TokenLayout* offset_layout, double omega) {
  const std::size_t n = q.rows(), width = q.cols();
  if (q.rank() != 2 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q, k, v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
  }
  if (heads == 0 || width % heads) throw DimensionError("attention: width not divisible by heads");
  if (mask.size() != n * n) throw DimensionError("attention: mask size mismatch");
  if (offset_layout && offset_layout->size() != n) throw DimensionError("attention: layout size mismatch");
  const std::size_t hd = width / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  auto gather_head = [n, width, hd](const T* src, std::size_t h, T* dst) {
    for (std::size_t r = 0; r < n; ++r) std::copy_n(src + r * width + h * hd, hd, dst + r * hd);
  };

  std::vector<T> probs(heads * n * n);
  std::vector<T> out(n * width);
  std::vector<T> qh(n * hd), kh(n * hd), vh(n * hd), oh(n * hd), scores(n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    gather_head(q.data(), h, qh.data());
    gather_head(k.data(), h, kh.data());
    gather_head(v.data(), h, vh.data());
    kernels::gemm(qh.data(), kh.data(), scores.data(), n, hd, n, true, false);
    for (auto& s : scores) s *= scale;
    if (offset_layout) add_inference_offset(scores.data(), *offset_layout, omega);
    T* p = probs.data() + h * n * n;
    kernels::masked_softmax_rows(scores.data(), mask.data(), n, n, p);
    kernels::gemm(p, vh.data(), oh.data(), n, n, hd, false, false);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(oh.data() + r * hd, hd, out.data() + r * width + h * hd);
  }

  return make_op_result<T>(
      "attention", q.shape(), std::move(out), {q, k, v},
      [n, width, heads, hd, scale, gather_head, probs = std::move(probs)](TensorNode<T>& self) {
        T* gq = parent_grad(self, 0);
        T* gk = parent_grad(self, 1);
        T* gv = parent_grad(self, 2);
        const T* qv = self.parents[0]->values->data();
        const T* kv = self.parents[1]->values->data();
        const T* vv = self.parents[2]->values->data();
        std::vector<T> qh(n * hd), kh(n * hd), vh(n * hd), doh(n * hd), tmp(n * hd), dp(n * n), ds(n * n);
        auto scatter = [n, width, hd](const T* src, std::size_t h, T* dst) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < hd; ++c) dst[r * width + h * hd + c] += src[r * hd + c];
        };
        for (std::size_t h = 0; h < heads; ++h) {
          const T* p = probs.data() + h * n * n;
          gather_head(self.grad.data(), h, doh.data());
          if (gv) {
            kernels::gemm_tn(p, doh.data(), tmp.data(), n, n, hd, false);
            scatter(tmp.data(), h, gv);
          }
          if (!gq && !gk) continue;
          gather_head(vv, h, vh.data());
          kernels::gemm(doh.data(), vh.data(), dp.data(), n, hd, n, true, false);
          std::fill(ds.begin(), ds.end(), T(0));
          kernels::softmax_rows_backward(p, dp.data(), n, n, ds.data());
          for (auto& s : ds) s *= scale;
          if (gq) {
            gather_head(kv, h, kh.data());
            kernels::gemm(ds.data(), kh.data(), tmp.data(), n, n, hd, false, false);
            scatter(tmp.data(), h, gq);
          }
          if (gk) {
            gather_head(qv, h, qh.data());
            kernels::gemm_tn(ds.data(), qh.data(), tmp.data(), n, n, hd, false);
            scatter(tmp.data(), h, gk);
          }
        }
      });
}

template <typename T>
Tensor<T> latent_to_tokens(const LatentVideo& video) {
  video.validate();
  const auto& f0 = video.frames[0];
  const std::size_t hw = f0.tokens(), c = f0.channels;
  std::vector<T> out(video.size() * hw * c);
  for (std::size_t n = 0; n < video.size(); ++n) {
    const auto& f = video.frames[n];
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[(n * hw + p) * c + ch] = static_cast<T>(f.data[ch * hw + p]);
  }
  return Tensor<T>::from_values({video.size() * hw, c}, std::move(out));
}

template <typename T>
LatentVideo tokens_to_latent(const Tensor<T>& tokens, std::size_t frames, std::size_t h, std::size_t w,
                             std::size_t spatial_factor) {
  const std::size_t hw = h * w;
  if (tokens.rank() != 2 || tokens.rows() != frames * hw) {
    throw DimensionError("tokens_to_latent: " + shape_str(tokens.shape()) + " for " + std::to_string(frames) +
                         " frames of " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t c = tokens.cols();
  std::vector<LatentFrame> out;
  for (std::size_t n = 0; n < frames; ++n) {
    LatentFrame f(c, h, w);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) f.data[ch * hw + p] = static_cast<float>(tokens.at((n * hw + p) * c + ch));
    out.push_back(std::move(f));
  }
  return make_latent_video(std::move(out), spatial_factor);
}

template <typename T>
Tensor<T> timestep_embedding(double t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<T> out(dim, T(0));
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = static_cast<T>(std::cos(1000.0 * t * freq));
    out[half + i] = static_cast<T>(std::sin(1000.0 * t * freq));
  }
  return Tensor<T>::from_values({1, dim}, std::move(out));
}

template <typename T>
Tensor<T> model_forward(const Tensor<T>& visual, double t, const TokenLayout& layout, const AttentionMask& mask,
                        const ModelWeights<T>& weights, const ModelConfig& config, ForwardOptions opts) {
  const std::size_t nv = layout.visual_size(), n = layout.size(), d = config.dim;
  if (visual.rank() != 2 || visual.rows() != nv || visual.cols() != config.channels) {
    throw DimensionError("model_forward: visual tokens " + shape_str(visual.shape()) + ", layout expects " +
                         std::to_string(nv) + "x" + std::to_string(config.channels));
  }
  if (mask.size != n) throw DimensionError("model_forward: mask does not match layout");
  if (weights.blocks.size() != config.layers) throw DimensionError("model_forward: layer count mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("model_forward: timestep outside [0, 1]");

  const auto scale_vec = segment_scales<T>(layout, config, n);
  const std::span<const T> scales(scale_vec);
  const std::span<const T> vis_scales = scales.first(nv);
  const std::vector<T> mask_t(mask.values.begin(), mask.values.end());
  const auto coords = fspe_positions(layout, config.delta);
  const auto bands = default_rope_bands(config.head_dim());
  const TokenLayout* offset = opts.inference && config.omega > 0 ? &layout : nullptr;

  std::vector<Tensor<T>> parts{lora_apply(weights.patch_in, visual, vis_scales)};
  const auto tp = gather_rows(weights.text_table, std::span<const std::int32_t>(layout.target_prompt));
  parts.push_back(tp);
  if (!layout.cond_prompt.empty())
    parts.push_back(gather_rows(weights.text_table, std::span<const std::int32_t>(layout.cond_prompt)));
  auto x = concat_rows(parts);

  const std::span<const T> none;
  auto temb = lora_apply(weights.time2, silu(lora_apply(weights.time1, timestep_embedding<T>(t, d), none)), none);
  auto g = add(temb, lora_apply(weights.text_proj, mean_rows(tp), none));
  auto sg = silu(g);

  for (const auto& b : weights.blocks) {
    auto mod = lora_apply(b.ada, sg, none).reshape({6, d});
    auto row = [&mod](std::size_t i) { return slice_rows(mod, i, i + 1); };
    auto a = modulate(rms_norm(x, b.norm1), row(0), row(1));
    auto q = apply_rope(lora_apply(b.q, a, scales), coords, bands, config.heads);
    auto k = apply_rope(lora_apply(b.k, a, scales), coords, bands, config.heads);
    auto v = lora_apply(b.v, a, scales);
    auto att = attention(q, k, v, std::span<const T>(mask_t), config.heads, offset, config.omega);
    x = gated_add(x, row(2), lora_apply(b.o, att, scales));

    auto m = modulate(rms_norm(x, b.norm2), row(3), row(4));
    auto hidden = mul(silu(lora_apply(b.w1, m, scales)), lora_apply(b.w3, m, scales));
    x = gated_add(x, row(5), lora_apply(b.w2, hidden, scales));
  }

  auto fmod = lora_apply(weights.final_ada, sg, none).reshape({2, d});
  auto xv = slice_rows(x, 0, nv);
  auto y = modulate(rms_norm(xv, weights.final_norm), slice_rows(fmod, 0, 1), slice_rows(fmod, 1, 2));
  return lora_apply(weights.final_out, y, vis_scales);
}

template <typename T>
LatentVideo model_forward(const LatentVideo& noisy, double t, const TokenLayout& layout, const AttentionMask& mask,
                          const ModelWeights<T>& weights, const ModelConfig& config, ForwardOptions opts) {
  auto out = model_forward(latent_to_tokens<T>(noisy), t, layout, mask, weights, config, opts);
  return tokens_to_latent(out, layout.frames, layout.latent_h, layout.latent_w, noisy.spatial_factor);
}

#define DRACTRL_INSTANTIATE_MODEL(T)                                                                              \
  template Tensor<T> lora_apply(const Linear<T>&, const Tensor<T>&, std::span<const T>);                        \
  template std::vector<T> segment_scales<T>(const TokenLayout&, const ModelConfig&, std::size_t);               \
  template ModelWeights<T> init_weights<T>(const ModelConfig&, Rng&);                                           \
  template void attach_adapters(ModelWeights<T>&, const ModelConfig&, Rng&);                                    \
  template void set_trainable(ModelWeights<T>&, TrainScope);                                                    \
  template ModelWeights<T> alias_weights(const ModelWeights<T>&);                                               \
  template ModelWeights<T> clone_weights(const ModelWeights<T>&);                                               \
  template std::vector<Tensor<T>> collect_trainable(ModelWeights<T>&);                                          \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const T>,        \
                               std::size_t, const TokenLayout*, double);                                         \
  template Tensor<T> latent_to_tokens<T>(const LatentVideo&);                                                   \
  template LatentVideo tokens_to_latent(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);  \
  template Tensor<T> timestep_embedding<T>(double, std::size_t);                                                \
  template Tensor<T> model_forward(const Tensor<T>&, double, const TokenLayout&, const AttentionMask&,          \
                                   const ModelWeights<T>&, const ModelConfig&, ForwardOptions);                 \
  template LatentVideo model_forward(const LatentVideo&, double, const TokenLayout&, const AttentionMask&,      \
                                     const ModelWeights<T>&, const ModelConfig&, ForwardOptions);

DRACTRL_INSTANTIATE_MODEL(float)
DRACTRL_INSTANTIATE_MODEL(double)

template ModelWeights<double> cast_weights<double, float>(const ModelWeights<float>&);
template ModelWeights<float> cast_weights<float, double>(const ModelWeights<double>&);
template ModelWeights<float> cast_weights<float, float>(const ModelWeights<float>&);
template ModelWeights<double> cast_weights<double, double>(const ModelWeights<double>&);

}  // namespace dractrl
