#include "dractrl/vocab.hpp"

#include <sstream>

#include "dractrl/error.hpp"

namespace dractrl {

Vocab::Vocab() {
  words_ = {"[PAD]", "[UNK]", std::string(kDepthWord)};
  for (const auto* list : {&grammar_glue(), &grammar_colors(), &grammar_shapes()})
    words_.insert(words_.end(), list->begin(), list->end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<std::int32_t>(i));
}

const Vocab& Vocab::standard() {
  static const Vocab v;
  return v;
}

std::int32_t Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::word(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw DomainError("vocab: id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> tokenize_prompt(std::string_view text, const Vocab& vocab) {
  std::vector<std::int32_t> ids;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) ids.push_back(vocab.id(w));
  if (ids.empty()) ids.push_back(kPadId);
  return ids;
}

std::vector<std::int32_t> pad_prompt(std::vector<std::int32_t> ids, std::size_t length) {
  if (ids.size() > length) {
    throw LengthError("prompt has " + std::to_string(ids.size()) + " tokens, limit " + std::to_string(length));
  }
  ids.resize(length, kPadId);
  return ids;
}

}  // namespace dractrl
