#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gendie/corpus.hpp"
#include "gendie/lm.hpp"

namespace gendie {

// Mean NLL of `output` given `ctx`: -(1/m) sum_t log P(y_t | x, y_<t).
double nll(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> output);

struct NegativeCandidate {
  TokenSeq sentence;
  double nll_with_passages = 0.0;
  double nll_without_passages = 0.0;
  double reduction_ratio = 0.0;  // (with - without) / without

  bool operator==(const NegativeCandidate&) const = default;
};

// NLLs of [prefix, sentence] with and without passages (prefix included in
// the scored span, context holds only the question and optionally passages).
NegativeCandidate score_candidate(const LanguageModel& lm, const QAItem& item, std::span<const TokenSeq> prefix,
                                  const TokenSeq& sentence);

struct PrestageConfig {
  int num_candidates = 6;
  int max_kept = 2;
  SamplingConfig sampling;
  // Off: keep max_kept random candidates instead of applying the ratio test.
  bool filter = true;
  // Whole answer as a single unit; sampling then runs until <eos>.
  bool answer_level = false;
  std::uint64_t seed = 0;
};

// Closed-book samples given question + prefix. Sentences equal to the target,
// repeated candidates and truncated samples are dropped, so fewer than
// `count` may come back.
std::vector<TokenSeq> sample_negatives(const LanguageModel& lm, const QAItem& item, std::span<const TokenSeq> prefix,
                                       const TokenSeq& target, int count, const SamplingConfig& sampling,
                                       std::uint64_t seed);

// Keeps candidates whose reduction ratio strictly exceeds the target's,
// highest ratio first, at most max_kept.
std::vector<NegativeCandidate> filter_candidates(const LanguageModel& lm, const QAItem& item,
                                                 std::span<const TokenSeq> prefix, const TokenSeq& target,
                                                 std::span<const TokenSeq> candidates, int max_kept = 2);

struct PrestageStats {
  int items = 0;
  int skipped_items = 0;
  int gold_sentences = 0;
  int candidates = 0;
  int kept_pairs = 0;
  int filtered_out = 0;  // gold sentences left without any negative

  nlohmann::json to_json() const;
};

struct PrestageResult {
  std::vector<ContrastiveInstance> instances;
  PrestageStats stats;
};

// Training units of an item's gold answer: its sentences, or the whole answer
// followed by <eos> in answer-level mode.
std::vector<TokenSeq> gold_units(const QAItem& item, const Vocabulary& vocab, bool answer_level);

PrestageResult build_prestage_dataset(const LanguageModel& lm, std::span<const QAItem> corpus,
                                      const PrestageConfig& cfg);

}  // namespace gendie
