#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace dractrl {

enum class Segment : int { cond_image = 0, target_image = 1, target_prompt = 2, cond_prompt = 3 };
inline constexpr std::size_t kSegmentCount = 4;

std::string to_string(Segment s);

enum class ModelMode { dra, two_frame_t2v, two_frame_i2v };

std::string to_string(ModelMode m);
ModelMode parse_mode(std::string_view name);

struct ModelConfig {
  std::size_t dim = 128;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t mlp_hidden = 256;
  std::size_t vocab_size = 0;  // 0: size of the standard vocabulary
  std::size_t channels = 16;
  std::size_t max_prompt_len = 16;
  int k = 2;
  int delta = 12;
  double omega = 0.6;
  std::size_t lora_rank = 16;
  // Indexed by Segment. Generated-frame tokens run on base weights.
  std::array<double, kSegmentCount> lora_scales{1.0, 0.0, 1.0, 1.0};
  ModelMode mode = ModelMode::dra;

  // Transition frames actually used; two-frame modes force 0.
  int effective_k() const { return mode == ModelMode::dra ? k : 0; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t resolved_vocab() const;
  // Throws ConfigError.
  void validate() const;
  // Fields that determine parameter shapes.
  bool shape_compatible(const ModelConfig& o) const;
};

}  // namespace dractrl
