#include "dractrl/mixup.hpp"

#include <algorithm>
#include <cmath>

#include "dractrl/error.hpp"

namespace dractrl {

std::string to_string(TransitionKind kind) { return kind == TransitionKind::fade ? "fade" : "slide"; }

TransitionKind parse_transition(const std::string& name) {
  if (name == "fade") return TransitionKind::fade;
  if (name == "slide") return TransitionKind::slide;
  throw ConfigError("unknown transition kind '" + name + "' (expected fade or slide)");
}

void MixupSchedule::validate() const {
  if (k < 1) throw DomainError("mixup schedule: K must be >= 1, got " + std::to_string(k));
  if (!(gamma > 0.0)) throw DomainError("mixup schedule: gamma must be positive");
}

std::vector<double> MixupSchedule::alphas() const {
  validate();
  std::vector<double> out(frame_count());
  const double denom = 4.0 * k + 1.0;
  for (std::size_t m = 0; m < out.size(); ++m) out[m] = std::min(1.0, static_cast<double>(m) / denom);
  return out;
}

double smoothstep_beta(double alpha) {
  if (!(alpha >= 0.0)) throw DomainError("smoothstep_beta: alpha must be >= 0");
  return alpha * alpha * (3.0 - 2.0 * alpha);
}

double mixup_value(double f0, double f1, double alpha, double gamma) {
  if (!(gamma > 0.0)) throw DomainError("mixup: gamma must be positive");
  const double beta = smoothstep_beta(std::min(alpha, 1.0));
  if (beta == 0.0) return f0;
  if (beta == 1.0) return f1;
  const double a = std::clamp(f0, 0.0, 1.0);
  const double b = std::clamp(f1, 0.0, 1.0);
  const double blend = (1.0 - beta) * std::pow(a, gamma) + beta * std::pow(b, gamma);
  return std::clamp(std::pow(blend, 1.0 / gamma), 0.0, 1.0);
}

Image mixup_frame(const Image& f0, const Image& f1, double alpha, double gamma) {
  if (!f0.same_shape(f1)) throw DimensionError("mixup_frame: endpoint images differ in shape");
  if (!(gamma > 0.0)) throw DomainError("mixup_frame: gamma must be positive");
  const double beta = smoothstep_beta(std::min(alpha, 1.0));
  if (beta == 0.0) return f0;
  if (beta == 1.0) return f1;
  Image out(f0.height, f0.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>(mixup_value(f0.pixels[i], f1.pixels[i], alpha, gamma));
  }
  return out;
}

FrameSequence build_fade_sequence(const Image& cond, const Image& target, const MixupSchedule& schedule) {
  if (!cond.same_shape(target)) throw DimensionError("fade sequence: condition and target differ in shape");
  FrameSequence seq;
  seq.kind = TransitionKind::fade;
  seq.alphas = schedule.alphas();
  seq.frames.reserve(seq.alphas.size());
  for (double a : seq.alphas) seq.frames.push_back(mixup_frame(cond, target, a, schedule.gamma));
  return seq;
}

Image slide_frame(const Image& cond, const Image& target, double alpha) {
  if (!cond.same_shape(target)) throw DimensionError("slide frame: condition and target differ in shape");
  const double beta = smoothstep_beta(std::min(alpha, 1.0));
  const auto w = static_cast<long>(cond.width);
  const long shift = std::clamp(std::lround(beta * static_cast<double>(w)), 0L, w);
  if (shift == 0) return cond;
  if (shift == w) return target;
  Image out = target;
  for (std::size_t y = 0; y < cond.height; ++y)
    for (long x = 0; x + shift < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(y, static_cast<std::size_t>(x), c) = cond.at(y, static_cast<std::size_t>(x + shift), c);
  return out;
}

FrameSequence build_slide_sequence(const Image& cond, const Image& target, const MixupSchedule& schedule) {
  if (!cond.same_shape(target)) throw DimensionError("slide sequence: condition and target differ in shape");
  FrameSequence seq;
  seq.kind = TransitionKind::slide;
  seq.alphas = schedule.alphas();
  seq.frames.reserve(seq.alphas.size());
  for (double a : seq.alphas) seq.frames.push_back(slide_frame(cond, target, a));
  return seq;
}

FrameSequence build_transition(TransitionKind kind, const Image& cond, const Image& target,
                               const MixupSchedule& schedule) {
  return kind == TransitionKind::fade ? build_fade_sequence(cond, target, schedule)
                                      : build_slide_sequence(cond, target, schedule);
}

double loss_weight(int k, int K) {
  if (K < 1 || k < 0 || k > K) {
    throw DomainError("loss_weight: k=" + std::to_string(k) + " outside [0, " + std::to_string(K) + "]");
  }
  const double denom = 4.0 * K + 1.0;
  double total = 0.0;
  for (int i = 1; i <= 4; ++i) {
    const double b = smoothstep_beta((4.0 * k + i) / denom);
    total += b * b;
  }
  return total / 4.0;
}

Image8 normalize_dark_colors(const Image8& img) {
  Image8 out = img;
  for (auto& v : out.pixels) v = static_cast<std::uint8_t>(128 + std::lround(v * 127.0 / 255.0));
  return out;
}

Image normalize_dark_colors(const Image& img) { return dequantize(normalize_dark_colors(quantize(img))); }

}  // namespace dractrl
