#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <nlohmann/json.hpp>
#include <set>

#include "gendie/scoring.hpp"
#include "gendie/table_lm.hpp"
#include "gendie/treesample.hpp"
#include "test_support.hpp"

using namespace gendie;

namespace {

using Sparse = std::vector<std::pair<TokenId, double>>;

QAItem two_aspect_item() {
  QAItem it = fixtures::tiny_item();
  it.short_answers = {{"a"}, {"b b", "x"}};
  return it;
}

TreeConfig small_config(int n, int depth, int budget) {
  TreeConfig c;
  c.branching = n;
  c.max_depth = depth;
  c.node_budget = budget;
  c.sampling.top_p = 1.0;
  return c;
}

// Independent builder: fresh decoding from (q, P, path) for every draw.
struct RefNode {
  std::vector<TokenSeq> path;
  TokenSeq sentence;
  int parent;
  bool terminated, truncated;
};

std::vector<RefNode> reference_tree(const LanguageModel& lm, const QAItem& item, const TreeConfig& cfg,
                                    std::uint64_t seed) {
  std::vector<RefNode> nodes{{{}, {}, -1, false, false}};
  std::vector<int> layer{0};
  for (int depth = 0; depth < cfg.max_depth && !layer.empty(); ++depth) {
    std::vector<int> next;
    for (int parent : layer) {
      if (static_cast<int>(nodes.size()) - 1 >= cfg.node_budget) break;
      std::vector<TokenSeq> siblings;
      for (int s = 0; s < cfg.branching; ++s) {
        for (int attempt = 0; attempt <= cfg.resample_attempts; ++attempt) {
          const auto ctx = make_context(item, lm.vocab(), nodes[static_cast<std::size_t>(parent)].path, true);
          const auto d = sample_sentence(lm, ctx, cfg.sampling,
                                         derive_seed(seed, {static_cast<std::uint64_t>(parent),
                                                            static_cast<std::uint64_t>(s),
                                                            static_cast<std::uint64_t>(attempt)}));
          if (std::find(siblings.begin(), siblings.end(), d.tokens) != siblings.end()) continue;
          siblings.push_back(d.tokens);
          RefNode r{nodes[static_cast<std::size_t>(parent)].path, d.tokens, parent, d.terminal, d.truncated};
          r.path.push_back(d.tokens);
          nodes.push_back(r);
          if (!d.terminal && !d.truncated) next.push_back(static_cast<int>(nodes.size()) - 1);
          break;
        }
      }
    }
    layer = std::move(next);
  }
  return nodes;
}

}  // namespace

TEST(GrowTree, ImmediateEosStopsAfterOneLayer) {
  const Vocabulary v = fixtures::tiny_vocab();
  TableLM lm(v);
  lm.set(Conditioning::any, {}, Sparse{{v.eos(), 1.0}});
  const auto tree = grow_tree(lm, fixtures::tiny_item(), TreeConfig{}, 3);
  ASSERT_FALSE(tree.error);
  // Duplicates of the single possible sentence are dropped.
  ASSERT_EQ(tree.nodes.size(), 2u);
  EXPECT_TRUE(tree.nodes[0].sentence.empty());
  EXPECT_EQ(tree.nodes[1].sentence, TokenSeq{v.eos()});
  EXPECT_TRUE(tree.nodes[1].terminated);
  EXPECT_TRUE(tree.nodes[1].children.empty());
}

TEST(GrowTree, MatchesReferenceBuilder) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const TableLM lm = fixtures::random_enumerable_table(seed, 4, 4);
    const QAItem item = fixtures::tiny_item();
    const int n = 2 + static_cast<int>(seed % 2);
    const TreeConfig cfg = small_config(n, 4, 40);
    const auto tree = grow_tree(lm, item, cfg, seed * 7 + 1);
    const auto ref = reference_tree(lm, item, cfg, seed * 7 + 1);
    ASSERT_EQ(tree.nodes.size(), ref.size()) << "seed " << seed;
    for (std::size_t i = 1; i < ref.size(); ++i) {
      const auto& nd = tree.nodes[i];
      EXPECT_EQ(nd.sentence, ref[i].sentence);
      EXPECT_EQ(nd.parent, ref[i].parent);
      EXPECT_EQ(nd.terminated, ref[i].terminated);
      EXPECT_EQ(tree.path(static_cast<int>(i)), ref[i].path);
      const auto ctx = make_context(item, lm.vocab(), tree.path(nd.parent), true);
      EXPECT_NEAR(nd.score.value, faithfulness_score(lm, ctx, nd.sentence).value, 1e-12);
    }
  }
}

TEST(GrowTree, StructuralInvariants) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const TableLM lm = fixtures::random_enumerable_table(seed, 4, 4);
    const int n = 2 + static_cast<int>(seed % 3);
    const int budget = 5 + static_cast<int>(seed * 3 % 50);
    const int depth = 1 + static_cast<int>(seed % 6);
    const auto tree = grow_tree(lm, fixtures::tiny_item(), small_config(n, depth, budget), seed);
    EXPECT_LE(static_cast<int>(tree.nodes.size()) - 1, budget + n);
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      const auto& nd = tree.nodes[i];
      EXPECT_LE(nd.depth, depth);
      EXPECT_LE(static_cast<int>(nd.children.size()), n);
      if (nd.terminated || nd.truncated) EXPECT_TRUE(nd.children.empty());
      std::set<TokenSeq> seen;
      for (int c : nd.children) {
        EXPECT_EQ(tree.nodes[static_cast<std::size_t>(c)].parent, static_cast<int>(i));
        EXPECT_EQ(tree.nodes[static_cast<std::size_t>(c)].depth, nd.depth + 1);
        EXPECT_TRUE(seen.insert(tree.nodes[static_cast<std::size_t>(c)].sentence).second);
      }
      if (i > 0) EXPECT_LE(nd.score.value, 0.0);
    }
  }
}

TEST(GrowTree, DeterministicForSeed) {
  const TableLM lm = fixtures::random_enumerable_table(2, 4, 4);
  const auto t1 = grow_tree(lm, fixtures::tiny_item(), TreeConfig{}, 9);
  const auto t2 = grow_tree(lm, fixtures::tiny_item(), TreeConfig{}, 9);
  EXPECT_EQ(tree_to_json(t1, lm.vocab()), tree_to_json(t2, lm.vocab()));
}

TEST(EmRecall, Examples) {
  const std::vector<std::vector<std::string>> sets{{"june 29 2007"}, {"Rome", "roma"}};
  EXPECT_DOUBLE_EQ(em_recall("It opened on June 29, 2007 in Rome.", sets), 1.0);
  EXPECT_DOUBLE_EQ(em_recall("It opened on June 29, 2007.", sets), 0.5);
  EXPECT_DOUBLE_EQ(em_recall("Nothing relevant.", sets), 0.0);
  EXPECT_DOUBLE_EQ(em_recall("Romeo was there.", sets), 0.0);
  EXPECT_DOUBLE_EQ(em_recall("ROMA!", sets), 0.5);
  EXPECT_EQ(normalize_answer("  Hello,   World!! "), "hello world");
}

TEST(SelectBestPath, SimpleCases) {
  const Vocabulary v = fixtures::tiny_vocab();
  SampleTree t;
  t.nodes.resize(3);
  t.nodes[1] = {v.tokenize("a."), 0, {}, {-2.0, 2}, 1, true, false};
  t.nodes[2] = {v.tokenize("b."), 0, {}, {-0.1, 2}, 1, true, false};
  t.nodes[0].children = {1, 2};
  QAItem item = fixtures::tiny_item();
  const auto best = select_best_path(t, item, v);
  EXPECT_EQ(best.leaf, 1);
  EXPECT_DOUBLE_EQ(best.em_score, 1.0);
  EXPECT_TRUE(best.terminated);

  t.nodes[1].terminated = false;
  EXPECT_EQ(select_best_path(t, item, v).leaf, 2);

  SampleTree empty;
  empty.nodes.resize(1);
  EXPECT_THROW(select_best_path(empty, item, v), LMError);
}

TEST(SelectBestPath, FallsBackToDeepestWhenNothingTerminates) {
  const TableLM lm = fixtures::random_enumerable_table(1, 4, 4);
  TreeConfig cfg = small_config(2, 2, 100);
  auto tree = grow_tree(lm, fixtures::tiny_item(), cfg, 4);
  for (auto& nd : tree.nodes) nd.terminated = false;
  const auto best = select_best_path(tree, fixtures::tiny_item(), lm.vocab());
  EXPECT_FALSE(best.terminated);
  int deepest = 0;
  for (const auto& nd : tree.nodes) deepest = std::max(deepest, nd.depth);
  EXPECT_EQ(tree.nodes[static_cast<std::size_t>(best.leaf)].depth, deepest);
}

TEST(SelectBestPath, MatchesExhaustiveArgmax) {
  const QAItem item = two_aspect_item();
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const TableLM lm = fixtures::random_enumerable_table(seed, 3, 4);
    const auto tree = grow_tree(lm, item, small_config(3, 3, 120), seed);
    bool any = false;
    int oracle = -1;
    double oe = 0, os = 0;
    std::size_t ol = 0;
    for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
      if (!tree.nodes[i].terminated) continue;
      const auto sents = tree.path(static_cast<int>(i));
      const double e = em_recall(answer_text(sents, lm.vocab()), item.short_answers);
      double s = 0;
      for (const auto& f : tree.path_scores(static_cast<int>(i))) s += f.value;
      s /= static_cast<double>(sents.size());
      const bool better = !any || e > oe || (e == oe && (s > os || (s == os && sents.size() < ol)));
      if (better) {
        any = true;
        oracle = static_cast<int>(i);
        oe = e;
        os = s;
        ol = sents.size();
      }
    }
    if (!any) continue;
    const auto best = select_best_path(tree, item, lm.vocab());
    EXPECT_EQ(best.leaf, oracle) << "seed " << seed;
    EXPECT_EQ(select_best_path(tree, item, lm.vocab()).leaf, best.leaf);
  }
}

TEST(ExtractPairs, MatchesEnumeration) {
  const QAItem item = two_aspect_item();
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const TableLM lm = fixtures::random_enumerable_table(seed, 3, 4);
    const TreeConfig cfg = small_config(2 + static_cast<int>(seed % 2), 3, 60);
    const auto tree = grow_tree(lm, item, cfg, seed + 50);
    const auto best = select_best_path(tree, item, lm.vocab());
    const auto pairs = extract_pairs(tree, best, item);

    std::vector<ContrastiveInstance> expect;
    const auto path = tree.path(best.leaf);
    for (std::size_t d = 0; d < path.size(); ++d) {
      const std::vector<TokenSeq> prefix(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(d));
      const LMContext ctx = make_context(item, lm.vocab(), prefix, true);
      // Siblings: every child of the node whose path equals `prefix`.
      for (std::size_t j = 1; j < tree.nodes.size(); ++j) {
        if (tree.path(tree.nodes[j].parent) != prefix || tree.nodes[j].sentence == path[d]) continue;
        if (tree.nodes[j].truncated) continue;
        if (score_prefers(lm, ctx, path[d], tree.nodes[j].sentence)) {
          expect.push_back({item.id, prefix, path[d], tree.nodes[j].sentence, true});
        }
      }
    }
    ASSERT_EQ(pairs.size(), expect.size()) << "seed " << seed;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      EXPECT_EQ(pairs[k].prefix, expect[k].prefix);
      EXPECT_EQ(pairs[k].target, expect[k].target);
      EXPECT_EQ(pairs[k].negative, expect[k].negative);
    }
    if (cfg.branching == 2) EXPECT_LE(pairs.size(), path.size());
  }
}

TEST(ExtractPairs, NodeBeatenByAllSiblingsGivesNothing) {
  const Vocabulary v = fixtures::tiny_vocab();
  SampleTree t;
  t.nodes.resize(4);
  t.nodes[0].children = {1, 2, 3};
  t.nodes[1] = {v.tokenize("a."), 0, {}, {-3.0, 2}, 1, true, false};
  t.nodes[2] = {v.tokenize("b."), 0, {}, {-1.0, 2}, 1, true, false};
  t.nodes[3] = {v.tokenize("b b."), 0, {}, {-2.0, 3}, 1, true, false};
  PathCandidate best;
  best.leaf = 1;
  EXPECT_TRUE(extract_pairs(t, best, fixtures::tiny_item()).empty());
  best.leaf = 3;
  const auto pairs = extract_pairs(t, best, fixtures::tiny_item());
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].negative, v.tokenize("a."));
  EXPECT_TRUE(pairs[0].prefix.empty());
}
