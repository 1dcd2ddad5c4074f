#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "gendie/lm.hpp"

namespace gendie {

class ScoringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Log of the geometric-mean token probability of a sentence given
// (q, P, prefix): sum of token log-probs divided by the token count.
struct FaithfulnessScore {
  double value = 0.0;
  int token_count = 0;

  bool operator==(const FaithfulnessScore&) const = default;
};

// Length-normalized path score: arithmetic mean of per-sentence scores.
struct PathScore {
  std::vector<FaithfulnessScore> sentence_scores;
  double normalized = 0.0;

  bool operator==(const PathScore&) const = default;
};

// The one length normalization used everywhere (pair selection, search,
// and the objective's probability term).
double normalized_logprob(std::span<const double> token_logprobs);

FaithfulnessScore score_from_logprobs(std::span<const double> token_logprobs);

// `ctx` must carry passages.
FaithfulnessScore faithfulness_score(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> sentence);

PathScore path_score(std::span<const FaithfulnessScore> scores);
PathScore extend_path(const PathScore& path, FaithfulnessScore next);

// Strict S_a > S_a'; ties are not preferred.
bool score_prefers(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> a,
                   std::span<const TokenId> a_prime);

}  // namespace gendie
