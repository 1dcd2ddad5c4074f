#include "gendie/prestage.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gendie/rng.hpp"
#include "gendie/scoring.hpp"

namespace gendie {

double nll(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> output) {
  if (output.empty()) throw ScoringError("NLL of an empty output");
  return -normalized_logprob(token_logprobs(lm, ctx, output));
}

NegativeCandidate score_candidate(const LanguageModel& lm, const QAItem& item, std::span<const TokenSeq> prefix,
                                  const TokenSeq& sentence) {
  TokenSeq span = flatten(prefix);
  span.insert(span.end(), sentence.begin(), sentence.end());
  NegativeCandidate c;
  c.sentence = sentence;
  c.nll_with_passages = nll(lm, make_context(item, lm.vocab(), {}, true), span);
  c.nll_without_passages = nll(lm, make_context(item, lm.vocab(), {}, false), span);
  if (!(c.nll_without_passages > 0.0)) throw ScoringError("closed-book NLL must be positive for the ratio");
  c.reduction_ratio = (c.nll_with_passages - c.nll_without_passages) / c.nll_without_passages;
  return c;
}

std::vector<TokenSeq> sample_negatives(const LanguageModel& lm, const QAItem& item, std::span<const TokenSeq> prefix,
                                       const TokenSeq& target, int count, const SamplingConfig& sampling,
                                       std::uint64_t seed) {
  const LMContext ctx = make_context(item, lm.vocab(), {prefix.begin(), prefix.end()}, false);
  const auto base = lm.start(ctx);
  std::vector<TokenSeq> out;
  for (int i = 0; i < count; ++i) {
    auto state = base->clone();
    SampledSentence s = sample_sentence(*state, lm.vocab(), sampling, derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    if (s.truncated || s.tokens == target) continue;
    if (std::find(out.begin(), out.end(), s.tokens) != out.end()) continue;
    out.push_back(std::move(s.tokens));
  }
  return out;
}

std::vector<NegativeCandidate> filter_candidates(const LanguageModel& lm, const QAItem& item,
                                                 std::span<const TokenSeq> prefix, const TokenSeq& target,
                                                 std::span<const TokenSeq> candidates, int max_kept) {
  const double target_ratio = score_candidate(lm, item, prefix, target).reduction_ratio;
  std::vector<NegativeCandidate> kept;
  for (const auto& c : candidates) {
    NegativeCandidate nc = score_candidate(lm, item, prefix, c);
    if (nc.reduction_ratio > target_ratio) kept.push_back(std::move(nc));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.reduction_ratio > b.reduction_ratio; });
  if (static_cast<int>(kept.size()) > max_kept) kept.resize(static_cast<std::size_t>(std::max(max_kept, 0)));
  return kept;
}

nlohmann::json PrestageStats::to_json() const {
  return {{"items", items},           {"skipped_items", skipped_items}, {"gold_sentences", gold_sentences},
          {"candidates", candidates}, {"kept_pairs", kept_pairs},       {"filtered_out", filtered_out}};
}

std::vector<TokenSeq> gold_units(const QAItem& item, const Vocabulary& vocab, bool answer_level) {
  if (!answer_level) return gold_sentences(item, vocab);
  if (!item.gold_answer) throw CorpusError("item '" + item.id + "' has no gold answer");
  TokenSeq whole = vocab.tokenize(*item.gold_answer);
  whole.push_back(vocab.eos());
  return {whole};
}

PrestageResult build_prestage_dataset(const LanguageModel& lm, std::span<const QAItem> corpus,
                                      const PrestageConfig& cfg) {
  PrestageResult res;
  SamplingConfig sampling = cfg.sampling;
  if (cfg.answer_level) sampling.stop_at_sentence_end = false;

  for (std::size_t ii = 0; ii < corpus.size(); ++ii) {
    const QAItem& item = corpus[ii];
    ++res.stats.items;
    if (!item.gold_answer) {
      spdlog::warn("prestage: item '{}' has no gold answer, skipped", item.id);
      ++res.stats.skipped_items;
      continue;
    }
    const std::vector<TokenSeq> gold = gold_units(item, lm.vocab(), cfg.answer_level);
    int item_pairs = 0;
    for (std::size_t si = 0; si < gold.size(); ++si) {
      ++res.stats.gold_sentences;
      const std::span<const TokenSeq> prefix(gold.data(), si);
      const std::uint64_t seed = derive_seed(cfg.seed, {ii, si});
      const auto cands = sample_negatives(lm, item, prefix, gold[si], cfg.num_candidates, sampling, seed);
      res.stats.candidates += static_cast<int>(cands.size());

      std::vector<TokenSeq> negatives;
      if (cfg.filter) {
        for (auto& k : filter_candidates(lm, item, prefix, gold[si], cands, cfg.max_kept)) {
          negatives.push_back(std::move(k.sentence));
        }
      } else {
        std::vector<std::size_t> order(cands.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(seed, {0xF11Eu}));
        rng.shuffle(order);
        for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < cfg.max_kept; ++i) {
          negatives.push_back(cands[order[i]]);
        }
      }
      if (negatives.empty()) ++res.stats.filtered_out;
      for (auto& neg : negatives) {
        res.instances.push_back({item.id, {prefix.begin(), prefix.end()}, gold[si], std::move(neg), true});
        ++res.stats.kept_pairs;
        ++item_pairs;
      }
    }
    if (item_pairs == 0) spdlog::warn("prestage: item '{}' produced no contrastive pairs", item.id);
  }
  return res;
}

}  // namespace gendie
