#include "dractrl/model_config.hpp"

#include "dractrl/error.hpp"
#include "dractrl/vocab.hpp"

namespace dractrl {

std::string to_string(Segment s) {
  switch (s) {
    case Segment::cond_image: return "C_I";
    case Segment::target_image: return "T_I";
    case Segment::target_prompt: return "T_P";
    case Segment::cond_prompt: return "C_P";
  }
  return "?";
}

std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::dra: return "dra";
    case ModelMode::two_frame_t2v: return "two_frame_t2v";
    case ModelMode::two_frame_i2v: return "two_frame_i2v";
  }
  return "?";
}

ModelMode parse_mode(std::string_view name) {
  if (name == "dra") return ModelMode::dra;
  if (name == "two_frame_t2v") return ModelMode::two_frame_t2v;
  if (name == "two_frame_i2v") return ModelMode::two_frame_i2v;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

std::size_t ModelConfig::resolved_vocab() const { return vocab_size ? vocab_size : Vocab::standard().size(); }

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("model.dim " + std::to_string(dim) + " not divisible by model.heads " + std::to_string(heads));
  }
  if (head_dim() % 2 != 0) throw ConfigError("model head dim must be even");
  if (layers == 0) throw ConfigError("model.layers must be >= 1");
  if (mlp_hidden == 0) throw ConfigError("model.mlp_hidden must be >= 1");
  if (channels == 0) throw ConfigError("model.channels must be >= 1");
  if (k < 1) throw ConfigError("model.k must be >= 1");
  if (delta < 1) throw ConfigError("model.delta must be >= 1");
  if (!(omega >= 0)) throw ConfigError("model.omega must be >= 0");
  if (max_prompt_len == 0) throw ConfigError("model.max_prompt_len must be >= 1");
  if (resolved_vocab() < Vocab::standard().size()) throw ConfigError("model.vocab_size below the standard vocabulary");
}

bool ModelConfig::shape_compatible(const ModelConfig& o) const {
  return dim == o.dim && heads == o.heads && layers == o.layers && mlp_hidden == o.mlp_hidden &&
         resolved_vocab() == o.resolved_vocab() && channels == o.channels;
}

}  // namespace dractrl
