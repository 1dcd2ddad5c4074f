#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gendie/corpus.hpp"
#include "gendie/lm.hpp"
#include "gendie/scoring.hpp"

namespace gendie {

struct TreeConfig {
  int branching = 3;
  int max_depth = 6;
  int node_budget = 120;
  // Extra draws allowed per sample slot when it duplicates a sibling.
  int resample_attempts = 3;
  SamplingConfig sampling;
};

struct TreeNode {
  TokenSeq sentence;  // empty for the root
  int parent = -1;
  std::vector<int> children;
  FaithfulnessScore score;
  int depth = 0;
  bool terminated = false;  // sentence closed by <eos>
  bool truncated = false;   // hit the token cap; never expanded or paired
};

struct SampleTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  TreeConfig config;
  bool error = false;
  std::string error_message;

  // Sentences from the root (exclusive) down to `node` (inclusive).
  std::vector<TokenSeq> path(int node) const;
  std::vector<FaithfulnessScore> path_scores(int node) const;
};

// Layer-by-layer n-ary expansion under (q, P, path). Node scores come from the
// untempered log-probs recorded while sampling.
SampleTree grow_tree(const LanguageModel& lm, const QAItem& item, const TreeConfig& cfg, std::uint64_t seed);

// Lowercase, punctuation removed, whitespace collapsed.
std::string normalize_answer(std::string_view text);
// Fraction of aspect sets with at least one alias occurring in the answer at
// word boundaries after normalization.
double em_recall(std::string_view answer, std::span<const std::vector<std::string>> short_answer_sets);

struct PathCandidate {
  int leaf = -1;
  std::vector<TokenSeq> sentences;
  double em_score = 0.0;
  double path_score = 0.0;
  bool terminated = false;
};

// Highest EM over terminated paths; ties by path score, then shorter path,
// then smaller leaf index. Falls back to the deepest paths when nothing
// terminated (the result then has terminated == false).
PathCandidate select_best_path(const SampleTree& tree, const QAItem& item, const Vocabulary& vocab);

// Pairs (on-path node, sibling) whenever the on-path node scores strictly
// higher; the prefix is the shared path above them.
std::vector<ContrastiveInstance> extract_pairs(const SampleTree& tree, const PathCandidate& best, const QAItem& item);

nlohmann::json tree_to_json(const SampleTree& tree, const Vocabulary& vocab,
                            const std::optional<PathCandidate>& best = std::nullopt);

}  // namespace gendie
