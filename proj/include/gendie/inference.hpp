#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gendie/corpus.hpp"
#include "gendie/lm.hpp"
#include "gendie/scoring.hpp"

namespace gendie {

enum class TokenDecodeKind { Greedy, Beam, Sample };

// How candidate sentences are produced inside one sentence-level step.
struct TokenDecode {
  TokenDecodeKind kind = TokenDecodeKind::Beam;
  SamplingConfig sampling;  // Sample mode only
  std::uint64_t seed = 0;   // Sample mode only
  // Hypothesis pops allowed in the exact top-k search before the remaining
  // open hypotheses are completed greedily.
  int expansion_budget = 4096;
};

struct InferenceConfig {
  int num_beams = 3;   // N
  int beam_width = 3;  // M
  int max_steps = 6;
  int max_tokens = 64;  // per sentence
  // Off: a unit runs until <eos> (whole-answer decoding).
  bool stop_at_sentence_end = true;
  TokenDecode token_decode;
};

struct Beam {
  SentenceSequence sentences;
  PathScore scores;
  bool finished = false;
  bool truncated = false;  // some sentence hit the per-sentence token cap
};

struct GenerationResult {
  std::string answer;
  std::vector<TokenSeq> sentences;
  PathScore score;
  bool finished = false;
  bool truncated = false;
};

// Up to M candidate next sentences for an unfinished beam, conditioned on
// (q, P, beam sentences). Beam mode returns the M completions with the
// highest summed token log-probability.
std::vector<SampledSentence> expand_beam(const LanguageModel& lm, const QAItem& item, const Beam& beam, int m,
                                         const InferenceConfig& cfg, std::uint64_t step_seed = 0);

// Exact k best completions of a sentence from `state` by summed log-prob.
std::vector<SampledSentence> top_k_sentences(const DecodeState& state, const Vocabulary& vocab, int k, int max_tokens,
                                             bool stop_at_sentence_end, int expansion_budget);

// Argmax decoding one sentence at a time, at most max_steps sentences.
GenerationResult generate_greedy(const LanguageModel& lm, const QAItem& item, const InferenceConfig& cfg);

// Sentence-level beam search over length-normalized faithfulness scores.
GenerationResult hierarchical_generate(const LanguageModel& lm, const QAItem& item, const InferenceConfig& cfg);

// Plain token-level beam search of width num_beams over the whole answer,
// final pick by length-normalized log-probability.
GenerationResult beam_generate(const LanguageModel& lm, const QAItem& item, const InferenceConfig& cfg);

// Splits a decoded token stream into sentence units (closed by a sentence
// end or <eos>) carrying their recorded log-probs.
std::vector<SampledSentence> segment_stream(const TokenSeq& tokens, const std::vector<double>& logprobs,
                                            const Vocabulary& vocab);

}  // namespace gendie
