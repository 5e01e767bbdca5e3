#pragma once

#include <string>
#include <vector>

#include "dractrl/image.hpp"

namespace dractrl {

enum class TransitionKind { fade, slide };

std::string to_string(TransitionKind kind);
TransitionKind parse_transition(const std::string& name);

// Pixel-frame grid for a transition with `k` noisy transition latent frames.
// alpha_m = m / (4k + 1) for m = 0 .. 4k + 4, clipped to 1, so latent group
// j covers exactly the indices (4j + i) / (4k + 1), i = 1..4.
struct MixupSchedule {
  int k = 2;
  double gamma = 2.2;

  std::size_t frame_count() const { return static_cast<std::size_t>(4 * k + 5); }
  std::vector<double> alphas() const;
  // Throws DomainError for k < 1 or gamma <= 0.
  void validate() const;
};

struct FrameSequence {
  std::vector<Image> frames;
  std::vector<double> alphas;
  TransitionKind kind = TransitionKind::fade;

  const Image& condition() const { return frames.front(); }
  const Image& target() const { return frames.back(); }
};

// beta = alpha^2 (3 - 2 alpha). Defined for alpha >= 0, including the > 1
// indices that appear in the loss weights.
double smoothstep_beta(double alpha);

// Scalar gamma-space blend of two values in [0, 1], evaluated in 64-bit.
double mixup_value(double f0, double f1, double alpha, double gamma);

// Gamma-space blend ((1-beta) f0^g + beta f1^g)^(1/g) with
// beta = smoothstep_beta(min(alpha, 1)). Exact copies at beta = 0 and 1.
Image mixup_frame(const Image& f0, const Image& f1, double alpha, double gamma);

FrameSequence build_fade_sequence(const Image& cond, const Image& target, const MixupSchedule& schedule);

// One slide-away frame: the condition shifted left by round(beta * W)
// columns over the target.
Image slide_frame(const Image& cond, const Image& target, double alpha);

// Condition slides left by round(beta * W) columns revealing the target.
FrameSequence build_slide_sequence(const Image& cond, const Image& target, const MixupSchedule& schedule);

FrameSequence build_transition(TransitionKind kind, const Image& cond, const Image& target,
                               const MixupSchedule& schedule);

// Per-latent-frame loss weight: mean over i = 1..4 of beta((4k+i)/(4K+1))^2.
double loss_weight(int k, int K);

// v' = 128 + round(v * 127 / 255) per channel, lifting black to mid-gray.
Image8 normalize_dark_colors(const Image8& img);
// Float-image convenience: quantize, remap, dequantize.
Image normalize_dark_colors(const Image& img);

}  // namespace dractrl
