#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dractrl/codec.hpp"
#include "dractrl/layout.hpp"
#include "dractrl/model_config.hpp"
#include "dractrl/numerics/rng.hpp"
#include "dractrl/numerics/tensor.hpp"
#include "dractrl/rope.hpp"

namespace dractrl {

// y = x W^T + b + s_row * (x A^T) B^T. W is out x in, A is r x in and B is
// out x r. Adapter tensors are undefined when the rank is 0.
template <typename T>
struct Linear {
  Tensor<T> w;
  Tensor<T> b;
  Tensor<T> lora_a;
  Tensor<T> lora_b;

  std::size_t in_dim() const { return w.shape()[1]; }
  std::size_t out_dim() const { return w.shape()[0]; }
  std::size_t rank() const { return lora_a.defined() ? lora_a.shape()[0] : 0; }
};

// `row_scales` holds one adapter scale per row of x; empty means no adapter
// contribution at all.
template <typename T>
Tensor<T> lora_apply(const Linear<T>& layer, const Tensor<T>& x, std::span<const T> row_scales);

// Per-token scales from segment membership.
template <typename T>
std::vector<T> segment_scales(const TokenLayout& layout, const ModelConfig& config, std::size_t rows);

template <typename T>
struct Block {
  Tensor<T> norm1, norm2;
  Linear<T> q, k, v, o;
  Linear<T> w1, w3, w2;
  Linear<T> ada;  // silu(g) -> 6 * dim: shift, scale, gate for attention, then MLP
};

template <typename T>
struct ModelWeights {
  Linear<T> patch_in;
  Tensor<T> text_table;
  Linear<T> time1, time2, text_proj;
  std::vector<Block<T>> blocks;
  Tensor<T> final_norm;
  Linear<T> final_ada;
  Linear<T> final_out;

  // f(name, tensor, is_adapter) over every defined tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto lin = [&f](const std::string& name, auto& l) {
      f(name + ".w", l.w, false);
      if (l.b.defined()) f(name + ".b", l.b, false);
      if (l.lora_a.defined()) {
        f(name + ".lora_a", l.lora_a, true);
        f(name + ".lora_b", l.lora_b, true);
      }
    };
    lin("patch_in", self.patch_in);
    f(std::string("text_table"), self.text_table, false);
    lin("time1", self.time1);
    lin("time2", self.time2);
    lin("text_proj", self.text_proj);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      f(p + "norm1", b.norm1, false);
      f(p + "norm2", b.norm2, false);
      lin(p + "q", b.q);
      lin(p + "k", b.k);
      lin(p + "v", b.v);
      lin(p + "o", b.o);
      lin(p + "w1", b.w1);
      lin(p + "w3", b.w3);
      lin(p + "w2", b.w2);
      lin(p + "ada", b.ada);
    }
    f(std::string("final_norm"), self.final_norm, false);
    lin("final_ada", self.final_ada);
    lin("final_out", self.final_out);
  }
};

// Base weights ~ N(0, 1/fan_in), norms 1, the adaptive-norm projections and
// output layer zero so every block starts as the identity; adapters get
// A ~ N(0, 1/fan_in) and B = 0.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& config, Rng& rng);

// Adds fresh adapters of config.lora_rank to every per-token linear layer,
// replacing existing ones.
template <typename T>
void attach_adapters(ModelWeights<T>& w, const ModelConfig& config, Rng& rng);

enum class TrainScope { base, adapters, all, none };
template <typename T>
void set_trainable(ModelWeights<T>& w, TrainScope scope);

// Shares values with `w` but owns fresh gradient buffers.
template <typename T>
ModelWeights<T> alias_weights(const ModelWeights<T>& w);
template <typename T>
ModelWeights<T> clone_weights(const ModelWeights<T>& w);
template <typename To, typename From>
ModelWeights<To> cast_weights(const ModelWeights<From>& w);

template <typename T>
std::vector<Tensor<T>> collect_trainable(ModelWeights<T>& w);

// Multi-head attention over q, k, v [N x heads*head_dim] with an additive
// mask (N x N). When `offset_layout` is set, the inference offset is added
// to each head's logits before the softmax; it is treated as a constant in
// the backward pass.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::span<const T> mask,
                    std::size_t heads, const TokenLayout* offset_layout = nullptr, double omega = 0.0);

// Visual tokens [frames*h*w x C], frame-major then row-major.
template <typename T>
Tensor<T> latent_to_tokens(const LatentVideo& video);
template <typename T>
LatentVideo tokens_to_latent(const Tensor<T>& tokens, std::size_t frames, std::size_t h, std::size_t w,
                             std::size_t spatial_factor = 4);

// Sinusoidal embedding of 1000 * t, cosines then sines.
template <typename T>
Tensor<T> timestep_embedding(double t, std::size_t dim);

struct ForwardOptions {
  bool inference = false;  // enables the attention offset
};

// Velocity prediction for every visual token, same shape as `visual`.
template <typename T>
Tensor<T> model_forward(const Tensor<T>& visual, double t, const TokenLayout& layout, const AttentionMask& mask,
                        const ModelWeights<T>& weights, const ModelConfig& config, ForwardOptions opts = {});

// Convenience overload on latent videos.
template <typename T>
LatentVideo model_forward(const LatentVideo& noisy, double t, const TokenLayout& layout, const AttentionMask& mask,
                          const ModelWeights<T>& weights, const ModelConfig& config, ForwardOptions opts = {});

}  // namespace dractrl
