#pragma once

#include <cstddef>
#include <vector>

#include "dractrl/image.hpp"
#include "dractrl/mixup.hpp"

namespace dractrl {

// One latent frame, channel-major: data[c * h * w + i * w + j].
struct LatentFrame {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  LatentFrame() = default;
  LatentFrame(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t tokens() const { return height * width; }
  float& at(std::size_t c, std::size_t i, std::size_t j) { return data[(c * height + i) * width + j]; }
  float at(std::size_t c, std::size_t i, std::size_t j) const { return data[(c * height + i) * width + j]; }
  bool same_shape(const LatentFrame& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const LatentFrame& o) const = default;
};

enum class FrameRole { condition, transition, target };

// Frame 0 is the condition latent and the last frame the target latent.
struct LatentVideo {
  std::vector<LatentFrame> frames;
  std::vector<FrameRole> roles;
  std::size_t spatial_factor = 4;

  std::size_t size() const { return frames.size(); }
  // Number of noisy transition frames, i.e. frames.size() - 2.
  int k() const { return static_cast<int>(frames.size()) - 2; }
  void validate() const;
};

LatentVideo make_latent_video(std::vector<LatentFrame> frames, std::size_t spatial_factor);

// Fixed linear stand-in for a video autoencoder: f x f average pooling, then
// an orthonormal lift of the 3 pooled colour channels into C latent channels.
// Video encoding groups 4 pixel frames per latent frame after a leading
// single frame, the (4T + 1) -> (T + 1) causal layout.
class LatentCodec {
 public:
  explicit LatentCodec(std::size_t channels = 16, std::size_t spatial_factor = 4);

  std::size_t channels() const { return channels_; }
  std::size_t spatial_factor() const { return factor_; }
  // channels x 3, orthonormal columns.
  const std::vector<double>& lift() const { return lift_; }

  LatentFrame encode(const Image& img) const;
  Image decode(const LatentFrame& frame) const;

  // Frame 0 from the condition, frame k+1 the mean over pixel frames
  // 4k+1..4k+4, and the final frame encoded from the target on its own.
  LatentVideo encode_transition(const FrameSequence& seq, const MixupSchedule& schedule) const;
  // Plain (4T + 1)-frame video -> T + 1 latent frames.
  LatentVideo encode_video(const std::vector<Image>& frames) const;

  double roundtrip_error(const Image& img) const;

 private:
  std::size_t channels_;
  std::size_t factor_;
  std::vector<double> lift_;
};

LatentFrame encode_single(const Image& img, std::size_t channels = 16, std::size_t spatial_factor = 4);
Image decode_latent(const LatentFrame& frame, std::size_t spatial_factor = 4);
double roundtrip_error(const Image& img, std::size_t channels = 16, std::size_t spatial_factor = 4);

// f x f box average followed by nearest-neighbour upsampling.
Image patch_mean(const Image& img, std::size_t factor);

}  // namespace dractrl
