#include "dractrl/codec.hpp"

#include <cmath>
#include <string>

#include "dractrl/error.hpp"
#include "dractrl/numerics/rng.hpp"

namespace dractrl {
namespace {

constexpr std::uint64_t kLiftSeed = 0x0DECADE5u;

// Gram-Schmidt over Gaussian columns from a fixed seed.
std::vector<double> make_lift(std::size_t channels) {
  Rng rng(kLiftSeed);
  std::vector<double> m(channels * 3);
  for (auto& v : m) v = rng.normal();
  for (std::size_t col = 0; col < 3; ++col) {
    for (std::size_t prev = 0; prev < col; ++prev) {
      double dot = 0;
      for (std::size_t r = 0; r < channels; ++r) dot += m[r * 3 + col] * m[r * 3 + prev];
      for (std::size_t r = 0; r < channels; ++r) m[r * 3 + col] -= dot * m[r * 3 + prev];
    }
    double norm = 0;
    for (std::size_t r = 0; r < channels; ++r) norm += m[r * 3 + col] * m[r * 3 + col];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < channels; ++r) m[r * 3 + col] /= norm;
  }
  return m;
}

void check_divisible(const Image& img, std::size_t factor) {
  if (img.height == 0 || img.width == 0 || img.height % factor != 0 || img.width % factor != 0) {
    throw DimensionError("codec: resolution " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by spatial factor " + std::to_string(factor));
  }
}

}  // namespace

void LatentVideo::validate() const {
  if (frames.size() < 2) throw LayoutError("latent video needs at least condition and target frames");
  if (roles.size() != frames.size()) throw LayoutError("latent video: role count mismatch");
  if (roles.front() != FrameRole::condition || roles.back() != FrameRole::target) {
    throw LayoutError("latent video: frame 0 must be condition and the last frame target");
  }
  for (const auto& f : frames) {
    if (!f.same_shape(frames.front())) throw DimensionError("latent video: frames differ in shape");
  }
}

LatentVideo make_latent_video(std::vector<LatentFrame> frames, std::size_t spatial_factor) {
  LatentVideo v;
  v.spatial_factor = spatial_factor;
  v.roles.assign(frames.size(), FrameRole::transition);
  if (!v.roles.empty()) {
    v.roles.front() = FrameRole::condition;
    v.roles.back() = FrameRole::target;
  }
  v.frames = std::move(frames);
  v.validate();
  return v;
}

LatentCodec::LatentCodec(std::size_t channels, std::size_t spatial_factor)
    : channels_(channels), factor_(spatial_factor) {
  if (channels < 3) throw ConfigError("codec: need at least 3 latent channels");
  if (spatial_factor == 0) throw ConfigError("codec: spatial factor must be positive");
  lift_ = make_lift(channels);
}

LatentFrame LatentCodec::encode(const Image& img) const {
  check_divisible(img, factor_);
  const std::size_t h = img.height / factor_, w = img.width / factor_;
  LatentFrame out(channels_, h, w);
  const double inv_area = 1.0 / static_cast<double>(factor_ * factor_);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double pooled[3] = {0, 0, 0};
      for (std::size_t y = i * factor_; y < (i + 1) * factor_; ++y)
        for (std::size_t x = j * factor_; x < (j + 1) * factor_; ++x)
          for (std::size_t c = 0; c < 3; ++c) pooled[c] += img.at(y, x, c);
      for (auto& p : pooled) p *= inv_area;
      for (std::size_t ch = 0; ch < channels_; ++ch) {
        const double z = lift_[ch * 3] * pooled[0] + lift_[ch * 3 + 1] * pooled[1] + lift_[ch * 3 + 2] * pooled[2];
        out.at(ch, i, j) = static_cast<float>(z);
      }
    }
  }
  return out;
}

Image LatentCodec::decode(const LatentFrame& frame) const {
  if (frame.channels != channels_) {
    throw DimensionError("codec: latent has " + std::to_string(frame.channels) + " channels, codec expects " +
                         std::to_string(channels_));
  }
  Image out(frame.height * factor_, frame.width * factor_);
  for (std::size_t i = 0; i < frame.height; ++i) {
    for (std::size_t j = 0; j < frame.width; ++j) {
      double rgb[3] = {0, 0, 0};
      for (std::size_t ch = 0; ch < channels_; ++ch)
        for (std::size_t c = 0; c < 3; ++c) rgb[c] += lift_[ch * 3 + c] * frame.at(ch, i, j);
      for (std::size_t y = i * factor_; y < (i + 1) * factor_; ++y)
        for (std::size_t x = j * factor_; x < (j + 1) * factor_; ++x)
          for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(rgb[c]);
    }
  }
  return out;
}

namespace {

LatentFrame mean_of(const std::vector<LatentFrame>& group) {
  LatentFrame out = group.front();
  for (std::size_t idx = 0; idx < out.data.size(); ++idx) {
    double s = 0;
    for (const auto& f : group) s += f.data[idx];
    out.data[idx] = static_cast<float>(s / static_cast<double>(group.size()));
  }
  return out;
}

}  // namespace

LatentVideo LatentCodec::encode_transition(const FrameSequence& seq, const MixupSchedule& schedule) const {
  if (seq.frames.size() != schedule.frame_count()) {
    throw LayoutError("encode_transition: sequence has " + std::to_string(seq.frames.size()) +
                      " frames, schedule expects " + std::to_string(schedule.frame_count()));
  }
  std::vector<LatentFrame> frames;
  frames.reserve(static_cast<std::size_t>(schedule.k) + 2);
  frames.push_back(encode(seq.condition()));
  for (int k = 0; k < schedule.k; ++k) {
    std::vector<LatentFrame> group;
    for (int i = 1; i <= 4; ++i) group.push_back(encode(seq.frames[static_cast<std::size_t>(4 * k + i)]));
    frames.push_back(mean_of(group));
  }
  frames.push_back(encode(seq.target()));
  return make_latent_video(std::move(frames), factor_);
}

LatentVideo LatentCodec::encode_video(const std::vector<Image>& pixels) const {
  if (pixels.size() < 5 || (pixels.size() - 1) % 4 != 0) {
    throw LayoutError("encode_video: frame count " + std::to_string(pixels.size()) + " is not 4T+1 with T >= 1");
  }
  std::vector<LatentFrame> frames{encode(pixels.front())};
  for (std::size_t g = 0; g < (pixels.size() - 1) / 4; ++g) {
    std::vector<LatentFrame> group;
    for (std::size_t i = 1; i <= 4; ++i) group.push_back(encode(pixels[4 * g + i]));
    frames.push_back(mean_of(group));
  }
  return make_latent_video(std::move(frames), factor_);
}

double LatentCodec::roundtrip_error(const Image& img) const {
  const Image back = decode(encode(img));
  double s = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double d = static_cast<double>(img.pixels[i]) - back.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(img.pixels.size());
}

LatentFrame encode_single(const Image& img, std::size_t channels, std::size_t spatial_factor) {
  return LatentCodec(channels, spatial_factor).encode(img);
}

Image decode_latent(const LatentFrame& frame, std::size_t spatial_factor) {
  return LatentCodec(frame.channels, spatial_factor).decode(frame);
}

double roundtrip_error(const Image& img, std::size_t channels, std::size_t spatial_factor) {
  return LatentCodec(channels, spatial_factor).roundtrip_error(img);
}

Image patch_mean(const Image& img, std::size_t factor) {
  check_divisible(img, factor);
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.height / factor; ++i) {
    for (std::size_t j = 0; j < img.width / factor; ++j) {
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t y = i * factor; y < (i + 1) * factor; ++y)
          for (std::size_t x = j * factor; x < (j + 1) * factor; ++x) s += img.at(y, x, c);
        const auto m = static_cast<float>(s / static_cast<double>(factor * factor));
        for (std::size_t y = i * factor; y < (i + 1) * factor; ++y)
          for (std::size_t x = j * factor; x < (j + 1) * factor; ++x) out.at(y, x, c) = m;
      }
    }
  }
  return out;
}

}  // namespace dractrl
