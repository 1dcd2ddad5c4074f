#include "gendie/scoring.hpp"

namespace gendie {

double normalized_logprob(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw ScoringError("cannot score an empty sentence");
  double sum = 0.0;
  for (double lp : token_logprobs) sum += lp;
  return sum / static_cast<double>(token_logprobs.size());
}

FaithfulnessScore score_from_logprobs(std::span<const double> token_logprobs) {
  return {normalized_logprob(token_logprobs), static_cast<int>(token_logprobs.size())};
}

FaithfulnessScore faithfulness_score(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> sentence) {
  if (sentence.empty()) throw ScoringError("cannot score an empty sentence");
  if (!ctx.has_passages()) throw ScoringError("faithfulness is scored with passages in the context");
  const auto lps = token_logprobs(lm, ctx, sentence);
  return score_from_logprobs(lps);
}

PathScore path_score(std::span<const FaithfulnessScore> scores) {
  if (scores.empty()) throw ScoringError("path score of an empty path");
  PathScore p;
  p.sentence_scores.assign(scores.begin(), scores.end());
  double sum = 0.0;
  for (const auto& s : scores) sum += s.value;
  p.normalized = sum / static_cast<double>(scores.size());
  return p;
}

PathScore extend_path(const PathScore& path, FaithfulnessScore next) {
  std::vector<FaithfulnessScore> all = path.sentence_scores;
  all.push_back(next);
  return path_score(all);
}

bool score_prefers(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> a,
                   std::span<const TokenId> a_prime) {
  return faithfulness_score(lm, ctx, a).value > faithfulness_score(lm, ctx, a_prime).value;
}

}  // namespace gendie
