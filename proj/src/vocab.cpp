#include "gendie/vocab.hpp"

#include <cctype>

namespace gendie {

namespace {

bool is_mark_char(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

bool is_terminal_char(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

bool is_punctuation_mark(std::string_view word) {
  if (word.empty()) return false;
  for (char c : word) {
    if (!is_mark_char(c)) return false;
  }
  return true;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (std::string_view s : {kPad, kUnk, kBos, kPassage, kAnswer, kEos}) v.add(s);
  for (const auto& w : words) {
    if (w.empty()) throw VocabError("empty word in vocabulary");
    for (char c : w) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        throw VocabError("vocabulary word contains whitespace: '" + w + "'");
      }
    }
    if (!is_punctuation_mark(w) && is_mark_char(w.back())) {
      throw VocabError("vocabulary word ends with punctuation: '" + w + "'");
    }
    if (!v.contains(w)) v.add(w);
  }
  if (v.size() > kMaxSize) {
    throw VocabError("vocabulary exceeds " + std::to_string(kMaxSize) + " symbols");
  }
  return v;
}

void Vocabulary::add(std::string_view word) {
  const auto id = static_cast<TokenId>(words_.size());
  words_.emplace_back(word);
  index_.emplace(std::string(word), id);
  const bool end = !word.empty() && word.front() != '<' && is_terminal_char(word.back());
  sentence_end_.push_back(end);
  if (end) sentence_end_ids_.push_back(id);
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw VocabError("unknown word: '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw VocabError("token id out of range: " + std::to_string(id));
  }
  return words_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_sentence_end(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < sentence_end_.size() && sentence_end_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::tokenize(std::string_view text) const {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string_view chunk = text.substr(i, j - i);
    i = j;

    if (contains(chunk) && (chunk.front() == '<' || is_punctuation_mark(chunk))) {
      out.push_back(id(chunk));
      continue;
    }
    // Peel trailing marks one character at a time: "paris." -> "paris" "."
    std::size_t body = chunk.size();
    while (body > 0 && is_mark_char(chunk[body - 1])) --body;
    if (body > 0) out.push_back(id(chunk.substr(0, body)));
    for (std::size_t k = body; k < chunk.size(); ++k) out.push_back(id(chunk.substr(k, 1)));
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    const std::string& w = word(t);
    if (!out.empty() && !is_punctuation_mark(w)) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace gendie
