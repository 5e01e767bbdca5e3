#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dractrl {

// Word lists of the procedural prompt grammar:
//   "a <color> <shape> [and a <color> <shape> ...] on a <color> background"
inline const std::vector<std::string>& grammar_colors() {
  static const std::vector<std::string> c{"red", "green", "blue", "yellow", "cyan", "magenta", "white", "black"};
  return c;
}
inline const std::vector<std::string>& grammar_shapes() {
  static const std::vector<std::string> s{"circle", "square", "triangle"};
  return s;
}
inline const std::vector<std::string>& grammar_glue() {
  static const std::vector<std::string> g{"a", "and", "on", "background"};
  return g;
}

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::string_view kDepthWord = "[depth]";

class Vocab {
 public:
  // Special tokens first (PAD, UNK, [depth]), then the grammar words.
  static const Vocab& standard();

  std::int32_t id(std::string_view word) const;
  const std::string& word(std::int32_t id) const;
  std::size_t size() const { return words_.size(); }

 private:
  Vocab();
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Whitespace split and lookup; unknown words map to UNK. Empty text gives a
// single PAD. The result is not padded; see pad_prompt.
std::vector<std::int32_t> tokenize_prompt(std::string_view text, const Vocab& vocab = Vocab::standard());

// Right-pads with PAD to `length`; throws LengthError when ids are longer.
std::vector<std::int32_t> pad_prompt(std::vector<std::int32_t> ids, std::size_t length);

}  // namespace dractrl
