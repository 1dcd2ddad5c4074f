#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gendie/vocab.hpp"

namespace gendie {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One question with its evidence passages. short_answers holds one alias set
// per aspect the answer is expected to cover.
struct QAItem {
  std::string id;
  std::string question;
  std::vector<std::string> passages;
  std::optional<std::string> gold_answer;
  std::vector<std::vector<std::string>> short_answers;

  bool operator==(const QAItem&) const = default;
};

// Ordered token-id sentences of an answer. `terminal` marks an answer that
// ended with the end-of-sequence token.
struct SentenceSequence {
  std::vector<TokenSeq> sentences;
  bool terminal = false;

  std::size_t size() const { return sentences.size(); }
  // sentences[0..i); prefix(0) is empty.
  std::vector<TokenSeq> prefix(std::size_t i) const;
  TokenSeq flatten() const;

  bool operator==(const SentenceSequence&) const = default;
};

TokenSeq flatten(std::span<const TokenSeq> sentences);

// (q, shared prefix, target a, negative a') training unit.
struct ContrastiveInstance {
  std::string item_id;
  std::vector<TokenSeq> prefix;
  TokenSeq target;
  TokenSeq negative;
  bool with_passages = true;

  bool operator==(const ContrastiveInstance&) const = default;
};

// Splits after every '.', '!' and '?'. Abbreviations and ellipses are not
// special-cased ("U.S." yields two pieces). Pieces are whitespace-trimmed;
// empty input yields an empty list.
std::vector<std::string> split_sentences(std::string_view answer);

std::vector<QAItem> load_corpus(const std::filesystem::path& path);
std::vector<QAItem> parse_corpus(std::string_view jsonl, const std::string& source_name = "<memory>");
void save_corpus(std::span<const QAItem> items, const std::filesystem::path& path);
std::string corpus_to_jsonl(std::span<const QAItem> items);

// Instance files store sentences as text; the vocabulary maps them back.
void save_instances(std::span<const ContrastiveInstance> instances, const Vocabulary& vocab,
                    const std::filesystem::path& path);
std::string instances_to_jsonl(std::span<const ContrastiveInstance> instances, const Vocabulary& vocab);
std::vector<ContrastiveInstance> load_instances(const std::filesystem::path& path, const Vocabulary& vocab);
std::vector<ContrastiveInstance> parse_instances(std::string_view jsonl, const Vocabulary& vocab,
                                                 const std::string& source_name = "<memory>");

const QAItem& find_item(std::span<const QAItem> corpus, std::string_view id);

// Gold answer tokenized and segmented: one token sequence per sentence.
std::vector<TokenSeq> gold_sentences(const QAItem& item, const Vocabulary& vocab);

void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace gendie
