#include "gendie/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gendie/rng.hpp"

namespace gendie {

TokenSeq serialize_context(const LMContext& ctx, const Vocabulary& vocab) {
  TokenSeq out;
  out.push_back(vocab.bos());
  out.insert(out.end(), ctx.question.begin(), ctx.question.end());
  if (ctx.passages) {
    for (const auto& p : *ctx.passages) {
      out.push_back(vocab.passage_sep());
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  out.push_back(vocab.answer_sep());
  for (const auto& s : ctx.prefix) out.insert(out.end(), s.begin(), s.end());
  return out;
}

LMContext make_context(const QAItem& item, const Vocabulary& vocab, std::vector<TokenSeq> prefix,
                       bool with_passages) {
  LMContext ctx;
  ctx.question = vocab.tokenize(item.question);
  if (with_passages) {
    std::vector<TokenSeq> ps;
    ps.reserve(item.passages.size());
    for (const auto& p : item.passages) ps.push_back(vocab.tokenize(p));
    ctx.passages = std::move(ps);
  }
  ctx.prefix = std::move(prefix);
  return ctx;
}

std::vector<double> token_logprobs(DecodeState& state, std::span<const TokenId> seq, std::size_t vocab_size) {
  std::vector<double> out;
  out.reserve(seq.size());
  for (TokenId t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
      throw LMError("token id " + std::to_string(t) + " outside vocabulary of size " + std::to_string(vocab_size));
    }
    out.push_back(state.next_logprobs()[static_cast<std::size_t>(t)]);
    state.push(t);
  }
  return out;
}

std::vector<double> token_logprobs(const LanguageModel& lm, const LMContext& ctx, std::span<const TokenId> seq) {
  if (seq.empty()) throw LMError("token_logprobs: empty sequence");
  const std::size_t v = lm.vocab_size();
  for (TokenId t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw LMError("token id " + std::to_string(t) + " outside vocabulary of size " + std::to_string(v));
    }
  }
  auto state = lm.start(ctx);
  return token_logprobs(*state, seq, v);
}

TokenId argmax_token(std::span<const double> logprobs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logprobs.size(); ++i) {
    if (logprobs[i] > logprobs[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId sample_token(std::span<const double> logprobs, double top_p, double temperature, double uniform01) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw LMError("top_p must lie in (0, 1]");
  if (temperature < 0.0) throw LMError("temperature must be non-negative");
  if (temperature == 0.0) return argmax_token(logprobs);

  const double mx = *std::max_element(logprobs.begin(), logprobs.end());
  std::vector<std::pair<double, TokenId>> probs;
  probs.reserve(logprobs.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    if (!std::isfinite(logprobs[i])) continue;
    const double w = std::exp((logprobs[i] - mx) / temperature);
    if (w > 0.0) {
      probs.emplace_back(w, static_cast<TokenId>(i));
      z += w;
    }
  }
  if (probs.empty()) return argmax_token(logprobs);
  std::stable_sort(probs.begin(), probs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  // Smallest head whose mass reaches top_p.
  std::size_t keep = 0;
  double mass = 0.0;
  while (keep < probs.size()) {
    mass += probs[keep].first / z;
    ++keep;
    if (mass >= top_p) break;
  }
  double kept_total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_total += probs[i].first;
  double target = uniform01 * kept_total;
  for (std::size_t i = 0; i < keep; ++i) {
    target -= probs[i].first;
    if (target < 0.0) return probs[i].second;
  }
  return probs[keep - 1].second;
}

namespace {

template <typename Pick>
SampledSentence decode_sentence(DecodeState& state, const Vocabulary& vocab, int max_tokens,
                                bool stop_at_sentence_end, Pick&& pick) {
  if (max_tokens <= 0) throw LMError("max_tokens must be positive");
  SampledSentence out;
  while (true) {
    auto lp = state.next_logprobs();
    const TokenId t = pick(lp);
    out.tokens.push_back(t);
    out.logprobs.push_back(lp[static_cast<std::size_t>(t)]);
    state.push(t);
    if (t == vocab.eos()) {
      out.terminal = true;
      break;
    }
    if (stop_at_sentence_end && vocab.is_sentence_end(t)) break;
    if (static_cast<int>(out.tokens.size()) >= max_tokens) {
      out.truncated = true;
      break;
    }
  }
  return out;
}

}  // namespace

SampledSentence sample_sentence(DecodeState& state, const Vocabulary& vocab, const SamplingConfig& cfg,
                                std::uint64_t seed) {
  Rng rng(seed);
  return decode_sentence(state, vocab, cfg.max_tokens, cfg.stop_at_sentence_end, [&](std::span<const double> lp) {
    return sample_token(lp, cfg.top_p, cfg.temperature, rng.uniform());
  });
}

SampledSentence sample_sentence(const LanguageModel& lm, const LMContext& ctx, const SamplingConfig& cfg,
                                std::uint64_t seed) {
  auto state = lm.start(ctx);
  return sample_sentence(*state, lm.vocab(), cfg, seed);
}

SampledSentence greedy_sentence(DecodeState& state, const Vocabulary& vocab, int max_tokens,
                                bool stop_at_sentence_end) {
  return decode_sentence(state, vocab, max_tokens, stop_at_sentence_end,
                         [](std::span<const double> lp) { return argmax_token(lp); });
}

TokenSeq sentence_body(const TokenSeq& sentence, const Vocabulary& vocab) {
  TokenSeq out = sentence;
  if (!out.empty() && out.back() == vocab.eos()) out.pop_back();
  return out;
}

std::string answer_text(std::span<const TokenSeq> sentences, const Vocabulary& vocab) {
  TokenSeq all;
  for (const auto& s : sentences) {
    for (TokenId t : s) {
      if (t != vocab.eos()) all.push_back(t);
    }
  }
  return vocab.detokenize(all);
}

}  // namespace gendie
