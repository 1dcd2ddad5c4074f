#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gendie {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Word-level vocabulary. Ids 0..5 are reserved for the special tokens below;
// punctuation marks are ordinary words that the tokenizer peels off word ends.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kPassage = "<psg>";
  static constexpr std::string_view kAnswer = "<ans>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::size_t kMaxSize = 512;

  Vocabulary() = default;

  // Builds a vocabulary from ordinary words (specials are prepended).
  // Duplicates are ignored; words containing whitespace or ending in
  // punctuation (other than a bare punctuation mark) are rejected since they
  // would not survive a detokenize/tokenize round trip.
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view word) const;
  TokenId id(std::string_view word) const;  // throws VocabError when unknown
  const std::string& word(TokenId id) const;
  const std::vector<std::string>& words() const { return words_; }

  TokenId pad() const { return 0; }
  TokenId unk() const { return 1; }
  TokenId bos() const { return 2; }
  TokenId passage_sep() const { return 3; }
  TokenId answer_sep() const { return 4; }
  TokenId eos() const { return 5; }

  // Tokens whose surface form ends with '.', '!' or '?'.
  bool is_sentence_end(TokenId id) const;
  const std::vector<TokenId>& sentence_end_ids() const { return sentence_end_ids_; }

  TokenSeq tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> tokens) const;

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  void add(std::string_view word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<TokenId> sentence_end_ids_;
  std::vector<bool> sentence_end_;
};

bool is_punctuation_mark(std::string_view word);

}  // namespace gendie
