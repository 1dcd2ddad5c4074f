#include "gendie/treesample.hpp"

#include <algorithm>
#include <cctype>
#include <memory>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gendie/rng.hpp"

namespace gendie {

std::vector<TokenSeq> SampleTree::path(int node) const {
  std::vector<TokenSeq> out;
  for (int n = node; n > 0; n = nodes[static_cast<std::size_t>(n)].parent) {
    out.push_back(nodes[static_cast<std::size_t>(n)].sentence);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<FaithfulnessScore> SampleTree::path_scores(int node) const {
  std::vector<FaithfulnessScore> out;
  for (int n = node; n > 0; n = nodes[static_cast<std::size_t>(n)].parent) {
    out.push_back(nodes[static_cast<std::size_t>(n)].score);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

SampleTree grow_tree(const LanguageModel& lm, const QAItem& item, const TreeConfig& cfg, std::uint64_t seed) {
  if (cfg.branching < 1 || cfg.max_depth < 1 || cfg.node_budget < 1) throw LMError("invalid tree configuration");
  SampleTree tree;
  tree.config = cfg;
  tree.nodes.push_back(TreeNode{});

  // Decode cursors of the current frontier, parallel to `frontier`.
  std::vector<int> frontier{0};
  std::vector<std::unique_ptr<DecodeState>> states;
  try {
    states.push_back(lm.start(make_context(item, lm.vocab(), {}, true)));
  } catch (const std::exception& e) {
    tree.error = true;
    tree.error_message = e.what();
    return tree;
  }

  auto budget_left = [&] { return static_cast<int>(tree.nodes.size()) - 1 < cfg.node_budget; };

  try {
    for (int depth = 0; depth < cfg.max_depth && !frontier.empty() && budget_left(); ++depth) {
      std::vector<int> next;
      std::vector<std::unique_ptr<DecodeState>> next_states;
      for (std::size_t fi = 0; fi < frontier.size() && budget_left(); ++fi) {
        const int parent = frontier[fi];
        for (int s = 0; s < cfg.branching; ++s) {
          std::unique_ptr<DecodeState> st;
          SampledSentence drawn;
          bool fresh = false;
          for (int attempt = 0; attempt <= cfg.resample_attempts && !fresh; ++attempt) {
            st = states[fi]->clone();
            drawn = sample_sentence(*st, lm.vocab(), cfg.sampling,
                                    derive_seed(seed, {static_cast<std::uint64_t>(parent), static_cast<std::uint64_t>(s),
                                                       static_cast<std::uint64_t>(attempt)}));
            fresh = std::none_of(tree.nodes[static_cast<std::size_t>(parent)].children.begin(),
                                 tree.nodes[static_cast<std::size_t>(parent)].children.end(), [&](int c) {
                                   return tree.nodes[static_cast<std::size_t>(c)].sentence == drawn.tokens;
                                 });
          }
          if (!fresh) continue;
          TreeNode node;
          node.sentence = drawn.tokens;
          node.parent = parent;
          node.depth = depth + 1;
          node.score = score_from_logprobs(drawn.logprobs);
          node.terminated = drawn.terminal;
          node.truncated = drawn.truncated;
          const int id = static_cast<int>(tree.nodes.size());
          tree.nodes[static_cast<std::size_t>(parent)].children.push_back(id);
          const bool expandable = !node.terminated && !node.truncated;
          tree.nodes.push_back(std::move(node));
          if (expandable) {
            next.push_back(id);
            next_states.push_back(std::move(st));
          }
        }
      }
      frontier = std::move(next);
      states = std::move(next_states);
    }
  } catch (const std::exception& e) {
    tree.error = true;
    tree.error_message = e.what();
    spdlog::warn("treesample: item '{}' partial tree: {}", item.id, e.what());
  }
  return tree;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char ch : text) {
    if (std::ispunct(ch)) continue;
    if (std::isspace(ch)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

double em_recall(std::string_view answer, std::span<const std::vector<std::string>> short_answer_sets) {
  if (short_answer_sets.empty()) return 0.0;
  const std::string hay = " " + normalize_answer(answer) + " ";
  int covered = 0;
  for (const auto& aliases : short_answer_sets) {
    for (const auto& alias : aliases) {
      const std::string needle = normalize_answer(alias);
      if (!needle.empty() && hay.find(" " + needle + " ") != std::string::npos) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(short_answer_sets.size());
}

PathCandidate select_best_path(const SampleTree& tree, const QAItem& item, const Vocabulary& vocab) {
  if (tree.nodes.size() <= 1) throw LMError("cannot select a path from an empty tree");
  std::vector<int> leaves;
  for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
    if (tree.nodes[i].terminated) leaves.push_back(static_cast<int>(i));
  }
  const bool fallback = leaves.empty();
  if (fallback) {
    int deepest = 0;
    for (const auto& n : tree.nodes) deepest = std::max(deepest, n.depth);
    for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
      if (tree.nodes[i].depth == deepest) leaves.push_back(static_cast<int>(i));
    }
  }

  std::optional<PathCandidate> best;
  for (int leaf : leaves) {
    PathCandidate c;
    c.leaf = leaf;
    c.sentences = tree.path(leaf);
    c.em_score = em_recall(answer_text(c.sentences, vocab), item.short_answers);
    c.path_score = path_score(tree.path_scores(leaf)).normalized;
    c.terminated = !fallback;
    if (!best) {
      best = std::move(c);
      continue;
    }
    const auto key = [](const PathCandidate& p) {
      return std::make_tuple(p.em_score, p.path_score, -static_cast<long>(p.sentences.size()), -p.leaf);
    };
    if (key(c) > key(*best)) best = std::move(c);
  }
  return *best;
}

std::vector<ContrastiveInstance> extract_pairs(const SampleTree& tree, const PathCandidate& best, const QAItem& item) {
  std::vector<int> on_path;
  for (int n = best.leaf; n > 0; n = tree.nodes[static_cast<std::size_t>(n)].parent) on_path.push_back(n);
  std::reverse(on_path.begin(), on_path.end());

  std::vector<ContrastiveInstance> out;
  for (int a : on_path) {
    const TreeNode& na = tree.nodes[static_cast<std::size_t>(a)];
    if (na.truncated) continue;
    const TreeNode& parent = tree.nodes[static_cast<std::size_t>(na.parent)];
    const std::vector<TokenSeq> prefix = tree.path(na.parent);
    for (int b : parent.children) {
      if (b == a) continue;
      const TreeNode& nb = tree.nodes[static_cast<std::size_t>(b)];
      if (nb.truncated || nb.sentence == na.sentence) continue;
      if (na.score.value > nb.score.value) out.push_back({item.id, prefix, na.sentence, nb.sentence, true});
    }
  }
  return out;
}

nlohmann::json tree_to_json(const SampleTree& tree, const Vocabulary& vocab, const std::optional<PathCandidate>& best) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& n = tree.nodes[i];
    nodes.push_back({{"index", i},
                     {"parent", n.parent},
                     {"children", n.children},
                     {"depth", n.depth},
                     {"text", vocab.detokenize(n.sentence)},
                     {"score", n.score.value},
                     {"token_count", n.score.token_count},
                     {"terminated", n.terminated},
                     {"truncated", n.truncated}});
  }
  nlohmann::json j = {{"branching", tree.config.branching},
                      {"max_depth", tree.config.max_depth},
                      {"node_budget", tree.config.node_budget},
                      {"error", tree.error},
                      {"nodes", std::move(nodes)}};
  if (tree.error) j["error_message"] = tree.error_message;
  if (best) {
    std::vector<int> path;
    for (int n = best->leaf; n > 0; n = tree.nodes[static_cast<std::size_t>(n)].parent) path.push_back(n);
    std::reverse(path.begin(), path.end());
    j["best"] = {{"leaf", best->leaf},
                 {"path", path},
                 {"em", best->em_score},
                 {"path_score", best->path_score},
                 {"terminated", best->terminated}};
  }
  return j;
}

}  // namespace gendie
