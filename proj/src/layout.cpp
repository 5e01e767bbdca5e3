#include "dractrl/layout.hpp"

#include <cmath>

#include "dractrl/error.hpp"
#include "dractrl/numerics/tensor.hpp"

namespace dractrl {

TokenLayout build_token_layout(const ModelConfig& config, std::size_t frames, std::size_t latent_h,
                               std::size_t latent_w, std::span<const std::int32_t> target_prompt,
                               std::optional<std::span<const std::int32_t>> cond_prompt) {
  const auto expected = static_cast<std::size_t>(config.effective_k() + 2);
  if (frames != expected) {
    throw LayoutError("layout: " + std::to_string(frames) + " latent frames, expected " + std::to_string(expected));
  }
  if (latent_h == 0 || latent_w == 0) throw LayoutError("layout: empty latent grid");
  if (target_prompt.empty()) throw LayoutError("layout: target prompt has no tokens");
  if (target_prompt.size() > config.max_prompt_len) {
    throw LengthError("target prompt has " + std::to_string(target_prompt.size()) + " tokens, limit " +
                      std::to_string(config.max_prompt_len));
  }
  if (cond_prompt && cond_prompt->size() > config.max_prompt_len) {
    throw LengthError("condition prompt has " + std::to_string(cond_prompt->size()) + " tokens, limit " +
                      std::to_string(config.max_prompt_len));
  }

  TokenLayout out;
  out.frames = frames;
  out.latent_h = latent_h;
  out.latent_w = latent_w;
  out.target_prompt.assign(target_prompt.begin(), target_prompt.end());
  if (cond_prompt) out.cond_prompt.assign(cond_prompt->begin(), cond_prompt->end());

  const std::size_t hw = latent_h * latent_w;
  std::size_t pos = 0;
  auto push = [&](Segment s, std::size_t count) {
    auto& span = out.spans[static_cast<std::size_t>(s)];
    span = {pos, pos + count};
    out.segment_of.insert(out.segment_of.end(), count, s);
    pos += count;
  };
  push(Segment::cond_image, hw);
  push(Segment::target_image, (frames - 1) * hw);
  push(Segment::target_prompt, out.target_prompt.size());
  push(Segment::cond_prompt, out.cond_prompt.size());

  out.visual_coords.reserve(frames * hw);
  for (std::size_t n = 0; n < frames; ++n)
    for (std::size_t i = 0; i < latent_h; ++i)
      for (std::size_t j = 0; j < latent_w; ++j)
        out.visual_coords.push_back({static_cast<int>(n), static_cast<int>(i), static_cast<int>(j)});
  return out;
}

TokenLayout build_token_layout(const ModelConfig& config, const LatentVideo& latent,
                               std::span<const std::int32_t> target_prompt,
                               std::optional<std::span<const std::int32_t>> cond_prompt) {
  latent.validate();
  return build_token_layout(config, latent.size(), latent.frames[0].height, latent.frames[0].width, target_prompt,
                            cond_prompt);
}

std::vector<std::array<double, 3>> fspe_positions(const TokenLayout& layout, int delta) {
  if (delta < 1) throw ConfigError("delta must be >= 1");
  std::vector<std::array<double, 3>> pos;
  pos.reserve(layout.size());
  for (const auto& c : layout.visual_coords)
    pos.push_back({static_cast<double>(c.n) * delta, static_cast<double>(c.i), static_cast<double>(c.j)});
  const double text_start = static_cast<double>(layout.frames - 1) * delta + 1.0;
  for (std::size_t m = 0; pos.size() < layout.size(); ++m) pos.push_back({text_start + static_cast<double>(m), 0, 0});
  return pos;
}

bool segment_pair_blocked(Segment query, Segment key) {
  using S = Segment;
  return (query == S::cond_image && key == S::target_image) || (query == S::target_image && key == S::cond_prompt) ||
         (query == S::target_prompt && key == S::cond_image) ||
         (query == S::target_prompt && key == S::cond_prompt) || (query == S::cond_prompt && key == S::target_image);
}

AttentionMask build_attention_mask(const TokenLayout& layout) {
  AttentionMask mask;
  mask.size = layout.size();
  mask.values.assign(mask.size * mask.size, 0.0);
  for (std::size_t p = 0; p < mask.size; ++p)
    for (std::size_t q = 0; q < mask.size; ++q)
      if (segment_pair_blocked(layout.segment_of[p], layout.segment_of[q])) mask.values[p * mask.size + q] = kBlockedScore;
  return mask;
}

template <typename T>
void add_inference_offset(T* scores, const TokenLayout& layout, double omega) {
  const auto& rows = layout.span(Segment::target_image);
  const auto& cols = layout.span(Segment::target_prompt);
  if (rows.empty() || cols.empty() || omega == 0.0) return;
  const std::size_t n = layout.size();
  double acc = 0;
  for (std::size_t p = rows.begin; p < rows.end; ++p)
    for (std::size_t q = cols.begin; q < cols.end; ++q) acc += std::abs(static_cast<double>(scores[p * n + q]));
  const T shift = static_cast<T>(omega * acc / static_cast<double>(rows.size() * cols.size()));
  for (std::size_t p = rows.begin; p < rows.end; ++p)
    for (std::size_t q = cols.begin; q < cols.end; ++q) scores[p * n + q] += shift;
}

template void add_inference_offset<float>(float*, const TokenLayout&, double);
template void add_inference_offset<double>(double*, const TokenLayout&, double);

}  // namespace dractrl
