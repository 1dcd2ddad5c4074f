#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "gendie/corpus.hpp"
#include "gendie/vocab.hpp"

namespace gendie {

class LMError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Conditioning for one answer sentence. Absent passages means closed-book
// conditioning (question and answer prefix only).
struct LMContext {
  TokenSeq question;
  std::optional<std::vector<TokenSeq>> passages;
  std::vector<TokenSeq> prefix;

  bool has_passages() const { return passages.has_value(); }
};

// Deterministic layout: <bos> q [<psg> p_j]* <ans> prefix-sentences...
TokenSeq serialize_context(const LMContext& ctx, const Vocabulary& vocab);

LMContext make_context(const QAItem& item, const Vocabulary& vocab, std::vector<TokenSeq> prefix,
                       bool with_passages);

// Incremental decoding cursor. next_logprobs() is the log-distribution of the
// next token given everything pushed so far (always |V| entries).
class DecodeState {
 public:
  virtual ~DecodeState() = default;
  virtual std::span<const double> next_logprobs() const = 0;
  virtual void push(TokenId token) = 0;
  virtual std::unique_ptr<DecodeState> clone() const = 0;
};

// Backend contract consumed by scoring, sampling and search. Implementations
// must be pure functions of (parameters, inputs); start() may be called
// concurrently on a fixed snapshot.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual const Vocabulary& vocab() const = 0;
  virtual std::unique_ptr<DecodeState> start(const LMContext& ctx) const = 0;

  std::size_t vocab_size() const { return vocab().size(); }
  TokenId eos_id() const { return vocab().eos(); }
};

// log P(seq[t] | ctx, seq[0..t)) for every t.
std::vector<double> token_logprobs(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> seq);
// Same, continuing from an existing cursor (the cursor is advanced).
std::vector<double> token_logprobs(DecodeState& state, std::span<const TokenId> seq, std::size_t vocab_size);

struct SamplingConfig {
  double top_p = 0.9;
  double temperature = 1.0;
  int max_tokens = 64;
  // When false only <eos> ends a unit (whole-answer generation).
  bool stop_at_sentence_end = true;
};

struct SampledSentence {
  TokenSeq tokens;                // includes the closing punctuation or <eos>
  std::vector<double> logprobs;   // untempered model log-probs of `tokens`
  bool terminal = false;          // closed by <eos>
  bool truncated = false;         // hit max_tokens without a boundary

  bool operator==(const SampledSentence& o) const {
    return tokens == o.tokens && terminal == o.terminal && truncated == o.truncated;
  }
};

// Draws one token from a log-distribution after temperature scaling and
// nucleus truncation. temperature == 0 selects the argmax.
TokenId sample_token(std::span<const double> logprobs, double top_p, double temperature, double uniform01);
TokenId argmax_token(std::span<const double> logprobs);

SampledSentence sample_sentence(const LanguageModel& lm, const LMContext& ctx, const SamplingConfig& cfg,
                                std::uint64_t seed);
// Continues from `state`, leaving it positioned after the sentence.
SampledSentence sample_sentence(DecodeState& state, const Vocabulary& vocab, const SamplingConfig& cfg,
                                std::uint64_t seed);
SampledSentence greedy_sentence(DecodeState& state, const Vocabulary& vocab, int max_tokens,
                                bool stop_at_sentence_end = true);

// Sentence-body view: tokens without a trailing <eos>.
TokenSeq sentence_body(const TokenSeq& sentence, const Vocabulary& vocab);
// Answer text of a sentence chain; <eos> is dropped.
std::string answer_text(std::span<const TokenSeq> sentences, const Vocabulary& vocab);

}  // namespace gendie
