#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gendie/prestage.hpp"
#include "gendie/scoring.hpp"
#include "gendie/synthetic.hpp"
#include "gendie/table_lm.hpp"
#include "test_support.hpp"

using namespace gendie;

namespace {

using Sparse = std::vector<std::pair<TokenId, double>>;

QAItem three_sentence_item() {
  QAItem it = fixtures::tiny_item("three");
  it.gold_answer = "a. b. a b.";
  return it;
}

// Passages shift the single-token log-probs of "a" and "b" from -1.0 to the
// given values, so each ratio is simply (with - without) / without.
TableLM ratio_table(double nll_a_with, double nll_b_with) {
  const Vocabulary v = fixtures::tiny_vocab();
  TableLM lm(v);
  const TokenId a = v.id("a"), b = v.id("b"), x = v.id("x");
  const double ca = std::exp(-1.0), cb = std::exp(-1.0);
  lm.set(Conditioning::closed_book, {}, Sparse{{a, ca}, {b, cb}, {x, 1 - ca - cb}});
  const double wa = std::exp(-nll_a_with), wb = std::exp(-nll_b_with);
  lm.set(Conditioning::with_passages, {}, Sparse{{a, wa}, {b, wb}, {x, 1 - wa - wb}});
  return lm;
}

}  // namespace

TEST(Nll, Examples) {
  const Vocabulary v = Vocabulary::from_words({"w", "x", "y", "z"});
  TableLM uniform(v);
  std::vector<double> p(v.size(), 0.0);
  for (const char* w : {"w", "x", "y", "z"}) p[static_cast<std::size_t>(v.id(w))] = 0.25;
  uniform.set_default(p);
  LMContext ctx;
  ctx.question = {v.id("w")};
  EXPECT_NEAR(nll(uniform, ctx, v.tokenize("x y z w")), std::log(4.0), 1e-12);
  EXPECT_THROW(nll(uniform, ctx, TokenSeq{}), ScoringError);

  const Vocabulary tv = fixtures::tiny_vocab();
  TableLM hand(tv);
  const TokenId a = tv.id("a"), b = tv.id("b"), dot = tv.id(".");
  hand.set(Conditioning::any, {}, Sparse{{a, std::exp(-0.2)}, {b, 1 - std::exp(-0.2)}});
  hand.set(Conditioning::any, {a}, Sparse{{b, std::exp(-0.8)}, {dot, 1 - std::exp(-0.8)}});
  hand.set(Conditioning::any, {a, b}, Sparse{{dot, std::exp(-1.0)}, {tv.eos(), 1 - std::exp(-1.0)}});
  const LMContext open = make_context(fixtures::tiny_item(), tv, {}, true);
  EXPECT_NEAR(nll(hand, open, tv.tokenize("a b.")), 2.0 / 3.0, 1e-12);
}

TEST(Nll, NegatedFaithfulnessWithPassages) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TableLM lm = fixtures::random_enumerable_table(seed, 1, 4, true);
    Rng rng(seed);
    const LMContext open = make_context(fixtures::tiny_item(), lm.vocab(), {}, true);
    const TokenSeq s = fixtures::random_sentence(lm.vocab(), rng, 3);
    EXPECT_EQ(nll(lm, open, s), -faithfulness_score(lm, open, s).value);
  }
}

TEST(ScoreCandidate, PrefixIsPartOfTheScoredSpan) {
  const TableLM lm = fixtures::random_enumerable_table(4, 3, 4, true);
  const Vocabulary& v = lm.vocab();
  const QAItem item = fixtures::tiny_item();
  const std::vector<TokenSeq> prefix{v.tokenize("a."), v.tokenize("b a.")};
  const TokenSeq s = v.tokenize("b.");
  const auto c = score_candidate(lm, item, prefix, s);
  const TokenSeq span = v.tokenize("a. b a. b.");
  double with = 0.0, without = 0.0;
  for (std::size_t i = 0; i < span.size(); ++i) {
    const TokenSeq hist(span.begin(), span.begin() + static_cast<std::ptrdiff_t>(i));
    with -= lm.lookup_logprobs(true, hist)[static_cast<std::size_t>(span[i])];
    without -= lm.lookup_logprobs(false, hist)[static_cast<std::size_t>(span[i])];
  }
  with /= static_cast<double>(span.size());
  without /= static_cast<double>(span.size());
  EXPECT_NEAR(c.nll_with_passages, with, 1e-12);
  EXPECT_NEAR(c.nll_without_passages, without, 1e-12);
  EXPECT_NEAR(c.reduction_ratio, (with - without) / without, 1e-12);
}

TEST(FilterCandidates, ConstructedTableSoundness) {
  const QAItem item = fixtures::tiny_item();
  // Gold "a": passages cut its NLL by 40%; candidate "b" gets 10% worse.
  const TableLM helps_gold = ratio_table(0.6, 1.1);
  const Vocabulary& v = helps_gold.vocab();
  const TokenSeq a{v.id("a")}, b{v.id("b")};
  const auto kept = filter_candidates(helps_gold, item, {}, a, std::vector<TokenSeq>{b});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_NEAR(kept[0].reduction_ratio, 0.1, 1e-12);
  EXPECT_NEAR(score_candidate(helps_gold, item, {}, a).reduction_ratio, -0.4, 1e-12);

  const TableLM swapped = ratio_table(1.1, 0.6);
  EXPECT_TRUE(filter_candidates(swapped, item, {}, a, std::vector<TokenSeq>{b}).empty());
}

TEST(FilterCandidates, EqualRatioIsRejected) {
  const TableLM tie = ratio_table(0.7, 0.7);
  const Vocabulary& v = tie.vocab();
  EXPECT_TRUE(filter_candidates(tie, fixtures::tiny_item(), {}, TokenSeq{v.id("a")}, std::vector<TokenSeq>{TokenSeq{v.id("b")}})
                  .empty());
}

TEST(FilterCandidates, KeepsTopTwoDescending) {
  const Vocabulary v = fixtures::tiny_vocab();
  TableLM lm(v);
  const std::vector<std::string> words{"a", "b", "q", "p", "x", "y"};
  // Closed-book: every word at 1/6. With passages: "a" is strongly helped,
  // the rest get progressively less likely.
  Sparse closed, open;
  const std::vector<double> open_p{0.5, 0.2, 0.12, 0.1, 0.05, 0.03};
  for (std::size_t i = 0; i < words.size(); ++i) {
    closed.emplace_back(v.id(words[i]), 1.0 / 6.0);
    open.emplace_back(v.id(words[i]), open_p[i]);
  }
  lm.set(Conditioning::closed_book, {}, closed);
  lm.set(Conditioning::with_passages, {}, open);
  std::vector<TokenSeq> cands;
  for (const char* w : {"q", "y", "b", "x", "p"}) cands.push_back({v.id(w)});
  const auto kept = filter_candidates(lm, fixtures::tiny_item(), {}, TokenSeq{v.id("a")}, cands);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].sentence, TokenSeq{v.id("y")});
  EXPECT_EQ(kept[1].sentence, TokenSeq{v.id("x")});
  EXPECT_GT(kept[0].reduction_ratio, kept[1].reduction_ratio);
  EXPECT_EQ(filter_candidates(lm, fixtures::tiny_item(), {}, TokenSeq{v.id("a")}, cands, 10).size(), 5u);
}

TEST(SampleNegatives, ClosedBookDedupedAndDeterministic) {
  const Vocabulary v = fixtures::tiny_vocab();
  TableLM lm(v);
  const TokenId a = v.id("a"), b = v.id("b"), dot = v.id(".");
  lm.set(Conditioning::with_passages, {}, Sparse{{a, 1.0}});
  lm.set(Conditioning::closed_book, {}, Sparse{{a, 0.5}, {b, 0.5}});
  lm.set(Conditioning::any, {a}, Sparse{{dot, 1.0}});
  lm.set(Conditioning::any, {b}, Sparse{{dot, 1.0}});
  const QAItem item = fixtures::tiny_item();
  SamplingConfig cfg;
  cfg.top_p = 1.0;
  const TokenSeq target = v.tokenize("a.");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto negs = sample_negatives(lm, item, {}, target, 6, cfg, seed);
    // Passage conditioning would only ever produce the target.
    EXPECT_LE(negs.size(), 1u);
    for (const auto& n : negs) EXPECT_EQ(n, v.tokenize("b."));
    EXPECT_EQ(negs, sample_negatives(lm, item, {}, target, 6, cfg, seed));
  }
}

TEST(SampleNegatives, DropsTruncatedSamples) {
  const Vocabulary v = fixtures::tiny_vocab();
  TableLM lm(v);
  std::vector<double> only_b(v.size(), 0.0);
  only_b[static_cast<std::size_t>(v.id("b"))] = 1.0;
  lm.set_default(only_b);
  SamplingConfig cfg;
  cfg.max_tokens = 4;
  EXPECT_TRUE(sample_negatives(lm, fixtures::tiny_item(), {}, v.tokenize("a."), 6, cfg, 1).empty());
}

TEST(BuildPrestage, AllFilteredGivesNoInstances) {
  // Passages change nothing, so every ratio is exactly 0 and ties are rejected.
  const TableLM lm = fixtures::random_enumerable_table(9, 4, 4);
  const std::vector<QAItem> corpus{three_sentence_item()};
  const auto res = build_prestage_dataset(lm, corpus, PrestageConfig{});
  EXPECT_TRUE(res.instances.empty());
  EXPECT_EQ(res.stats.items, 1);
  EXPECT_EQ(res.stats.gold_sentences, 3);
  EXPECT_EQ(res.stats.filtered_out, 3);
  EXPECT_EQ(res.stats.kept_pairs, 0);
  EXPECT_GT(res.stats.candidates, 0);
}

TEST(BuildPrestage, SkipsItemsWithoutGold) {
  const TableLM lm = fixtures::random_enumerable_table(9, 4, 4, true);
  QAItem bare = fixtures::tiny_item("bare");
  bare.gold_answer.reset();
  const std::vector<QAItem> corpus{bare, fixtures::tiny_item("ok")};
  const auto res = build_prestage_dataset(lm, corpus, PrestageConfig{});
  EXPECT_EQ(res.stats.skipped_items, 1);
  EXPECT_EQ(res.stats.gold_sentences, 2);
  for (const auto& inst : res.instances) EXPECT_EQ(inst.item_id, "ok");
}

TEST(BuildPrestage, RecountMatchesIndependentOracle) {
  const auto world = SyntheticWorld::make({});
  const Vocabulary v = world.vocabulary();
  ToyLMConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.d_ff = 16;
  mc.context_window = 128;
  mc.init_std = 0.5;
  mc.seed = 4;
  const ToyLM lm(v, mc);
  CorpusConfig cc;
  cc.size = 6;
  const auto corpus = make_synthetic_corpus(world, cc);
  PrestageConfig cfg;
  cfg.seed = 17;
  cfg.sampling.max_tokens = 12;
  const auto res = build_prestage_dataset(lm, corpus, cfg);

  auto mean_nll = [&](const QAItem& item, bool passages, const TokenSeq& span) {
    auto st = lm.start(make_context(item, v, {}, passages));
    double s = 0.0;
    for (TokenId t : span) {
      s -= st->next_logprobs()[static_cast<std::size_t>(t)];
      st->push(t);
    }
    return s / static_cast<double>(span.size());
  };
  auto ratio = [&](const QAItem& item, const std::vector<TokenSeq>& prefix, const TokenSeq& s) {
    TokenSeq span = flatten(prefix);
    span.insert(span.end(), s.begin(), s.end());
    const double w = mean_nll(item, true, span), c = mean_nll(item, false, span);
    return (w - c) / c;
  };

  std::size_t expected_pairs = 0, cursor = 0;
  for (std::size_t ii = 0; ii < corpus.size(); ++ii) {
    const auto gold = gold_sentences(corpus[ii], v);
    for (std::size_t si = 0; si < gold.size(); ++si) {
      const std::vector<TokenSeq> prefix(gold.begin(), gold.begin() + static_cast<std::ptrdiff_t>(si));
      const auto cands = sample_negatives(lm, corpus[ii], prefix, gold[si], 6, cfg.sampling, derive_seed(17, {ii, si}));
      const double rt = ratio(corpus[ii], prefix, gold[si]);
      std::vector<std::pair<double, TokenSeq>> winners;
      for (const auto& c : cands) {
        const double r = ratio(corpus[ii], prefix, c);
        if (r > rt) winners.emplace_back(r, c);
      }
      std::stable_sort(winners.begin(), winners.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
      winners.resize(std::min<std::size_t>(winners.size(), 2));
      expected_pairs += winners.size();
      for (const auto& [r, neg] : winners) {
        ASSERT_LT(cursor, res.instances.size());
        const auto& inst = res.instances[cursor++];
        EXPECT_EQ(inst.item_id, corpus[ii].id);
        EXPECT_EQ(inst.prefix, prefix);
        EXPECT_EQ(inst.target, gold[si]);
        EXPECT_EQ(inst.negative, neg);
        EXPECT_NE(inst.negative, inst.target);
      }
    }
  }
  EXPECT_EQ(res.instances.size(), expected_pairs);
  EXPECT_EQ(static_cast<std::size_t>(res.stats.kept_pairs), expected_pairs);
}

TEST(BuildPrestage, UnfilteredModeKeepsRandomPair) {
  const TableLM lm = fixtures::random_enumerable_table(9, 4, 4);
  const std::vector<QAItem> corpus{three_sentence_item()};
  PrestageConfig cfg;
  cfg.filter = false;
  const auto res = build_prestage_dataset(lm, corpus, cfg);
  EXPECT_GT(res.instances.size(), 0u);
  std::map<std::size_t, int> per_prefix;
  for (const auto& inst : res.instances) {
    ++per_prefix[inst.prefix.size()];
    EXPECT_NE(inst.target, inst.negative);
  }
  for (const auto& [k, n] : per_prefix) EXPECT_LE(n, 2);
  const auto again = build_prestage_dataset(lm, corpus, cfg);
  ASSERT_EQ(again.instances.size(), res.instances.size());
  for (std::size_t i = 0; i < res.instances.size(); ++i) EXPECT_EQ(again.instances[i].negative, res.instances[i].negative);
}

TEST(GoldUnits, AnswerLevelIsOneUnitEndingInEos) {
  const Vocabulary v = fixtures::tiny_vocab();
  const QAItem item = three_sentence_item();
  EXPECT_EQ(gold_units(item, v, false).size(), 3u);
  const auto whole = gold_units(item, v, true);
  ASSERT_EQ(whole.size(), 1u);
  EXPECT_EQ(whole[0].back(), v.eos());
  EXPECT_EQ(whole[0].size(), v.tokenize("a. b. a b.").size() + 1);
}
