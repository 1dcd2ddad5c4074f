#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gendie/lm.hpp"

namespace gendie {

// Which conditioning mode a table entry applies to.
enum class Conditioning { any, with_passages, closed_book };

// Deterministic lookup-table backend. Conditional distributions are keyed by
// (conditioning mode, answer tokens so far), where "answer tokens" are the
// flattened prefix sentences followed by the tokens pushed while decoding.
// The question is not part of the key. Lookup falls back from the exact mode
// to Conditioning::any, then to the default distribution (uniform unless set).
class TableLM final : public LanguageModel {
 public:
  explicit TableLM(Vocabulary vocab);

  // `probs` must have |V| entries summing to 1 within 1e-9.
  void set(Conditioning mode, TokenSeq answer_context, std::vector<double> probs);
  // Convenience: sparse distribution given as (word, probability) pairs.
  void set(Conditioning mode, const TokenSeq& answer_context, const std::vector<std::pair<TokenId, double>>& probs);
  void set_default(std::vector<double> probs);

  const std::vector<double>& lookup_logprobs(bool with_passages, const TokenSeq& answer_tokens) const;
  std::size_t num_entries() const { return table_.size(); }

  const Vocabulary& vocab() const override { return vocab_; }
  std::unique_ptr<DecodeState> start(const LMContext& ctx) const override;

  // {"vocab": [...words], "default": {word: p}, "entries": [{"mode": "any"|"with_passages"|"closed_book",
  //  "context": [word...], "dist": {word: p}}]}; vocab excludes the special tokens.
  static TableLM from_json(const nlohmann::json& j);
  static TableLM load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

 private:
  std::vector<double> dense_from_probs(const std::vector<double>& probs) const;

  Vocabulary vocab_;
  std::vector<double> default_logprobs_;
  std::map<std::pair<Conditioning, TokenSeq>, std::vector<double>> table_;
};

}  // namespace gendie
