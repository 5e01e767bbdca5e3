#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dractrl/codec.hpp"
#include "dractrl/model_config.hpp"

namespace dractrl {

struct SegmentSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t p) const { return p >= begin && p < end; }
  bool operator==(const SegmentSpan&) const = default;
};

// Latent frame index and spatial position of a visual token.
struct GridCoord {
  int n = 0;
  int i = 0;
  int j = 0;
  bool operator==(const GridCoord&) const = default;
};

// Sequence order: condition-frame tokens, generated-frame tokens (frames
// 1..K+1, frame-major then row-major), target prompt, condition prompt.
struct TokenLayout {
  std::array<SegmentSpan, kSegmentCount> spans{};
  std::vector<Segment> segment_of;
  std::vector<GridCoord> visual_coords;
  std::vector<std::int32_t> target_prompt;
  std::vector<std::int32_t> cond_prompt;
  std::size_t frames = 0;
  std::size_t latent_h = 0;
  std::size_t latent_w = 0;

  const SegmentSpan& span(Segment s) const { return spans[static_cast<std::size_t>(s)]; }
  std::size_t size() const { return segment_of.size(); }
  std::size_t visual_size() const { return visual_coords.size(); }
  bool operator==(const TokenLayout&) const = default;
};

TokenLayout build_token_layout(const ModelConfig& config, const LatentVideo& latent,
                               std::span<const std::int32_t> target_prompt,
                               std::optional<std::span<const std::int32_t>> cond_prompt = std::nullopt);

// Same, from grid dimensions only.
TokenLayout build_token_layout(const ModelConfig& config, std::size_t frames, std::size_t latent_h,
                               std::size_t latent_w, std::span<const std::int32_t> target_prompt,
                               std::optional<std::span<const std::int32_t>> cond_prompt = std::nullopt);

// Rotary coordinates (temporal, height, width). Visual tokens get
// (n * delta, i, j); text token m of the combined prompt block gets
// ((frames - 1) * delta + 1 + m, 0, 0).
std::vector<std::array<double, 3>> fspe_positions(const TokenLayout& layout, int delta);

// True when queries of segment `q` may not attend to keys of segment `k`.
bool segment_pair_blocked(Segment query, Segment key);

// Dense additive mask: kBlockedScore where blocked, 0 elsewhere.
struct AttentionMask {
  std::size_t size = 0;
  std::vector<double> values;
  double at(std::size_t p, std::size_t q) const { return values[p * size + q]; }
  bool blocked(std::size_t p, std::size_t q) const { return at(p, q) != 0.0; }
};

AttentionMask build_attention_mask(const TokenLayout& layout);

// Adds omega * mean(|block|) to the (generated-frame rows x target-prompt
// columns) block of an N x N score matrix in place. No-op when either span
// is empty.
template <typename T>
void add_inference_offset(T* scores, const TokenLayout& layout, double omega);

}  // namespace dractrl
