#include "gendie/inference.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <queue>

#include "gendie/rng.hpp"

namespace gendie {

namespace {

bool closes_unit(TokenId t, const Vocabulary& vocab, bool stop_at_sentence_end) {
  return t == vocab.eos() || (stop_at_sentence_end && vocab.is_sentence_end(t));
}

// Open hypothesis of the best-first search. The cursor is materialized lazily
// so that a pop costs one forward step.
struct Hyp {
  double logp = 0.0;
  std::uint64_t order = 0;
  std::shared_ptr<const DecodeState> parent;  // cursor before `tokens.back()`
  TokenSeq tokens;
  std::vector<double> logprobs;

  bool operator<(const Hyp& o) const {
    if (logp != o.logp) return logp < o.logp;
    return order > o.order;
  }
};

SampledSentence finish_unit(Hyp h, const Vocabulary& vocab, bool stop_at_sentence_end) {
  SampledSentence s;
  s.terminal = h.tokens.back() == vocab.eos();
  s.truncated = !closes_unit(h.tokens.back(), vocab, stop_at_sentence_end);
  s.tokens = std::move(h.tokens);
  s.logprobs = std::move(h.logprobs);
  return s;
}

}  // namespace

std::vector<SampledSentence> top_k_sentences(const DecodeState& state, const Vocabulary& vocab, int k, int max_tokens,
                                             bool stop_at_sentence_end, int expansion_budget) {
  if (k <= 0) return {};
  if (max_tokens <= 0) throw LMError("max_tokens must be positive");
  std::vector<SampledSentence> done;
  std::priority_queue<Hyp> open;
  std::uint64_t order = 0;
  const std::shared_ptr<const DecodeState> root(state.clone());

  auto push_children = [&](const std::shared_ptr<const DecodeState>& cursor, const Hyp* base) {
    const auto lp = cursor->next_logprobs();
    for (std::size_t t = 0; t < lp.size(); ++t) {
      if (!std::isfinite(lp[t])) continue;
      Hyp h;
      h.logp = (base ? base->logp : 0.0) + lp[t];
      h.order = order++;
      h.parent = cursor;
      if (base) {
        h.tokens = base->tokens;
        h.logprobs = base->logprobs;
      }
      h.tokens.push_back(static_cast<TokenId>(t));
      h.logprobs.push_back(lp[t]);
      open.push(std::move(h));
    }
  };
  push_children(root, nullptr);

  int pops = 0;
  while (!open.empty() && static_cast<int>(done.size()) < k && pops < expansion_budget) {
    Hyp h = open.top();
    open.pop();
    ++pops;
    const TokenId last = h.tokens.back();
    if (closes_unit(last, vocab, stop_at_sentence_end) || static_cast<int>(h.tokens.size()) >= max_tokens) {
      done.push_back(finish_unit(std::move(h), vocab, stop_at_sentence_end));
      continue;
    }
    auto cursor = std::shared_ptr<DecodeState>(h.parent->clone());
    cursor->push(last);
    push_children(cursor, &h);
  }
  // Budget exhausted: complete the best open hypotheses greedily.
  while (!open.empty() && static_cast<int>(done.size()) < k) {
    Hyp h = open.top();
    open.pop();
    auto cursor = h.parent->clone();
    cursor->push(h.tokens.back());
    while (!closes_unit(h.tokens.back(), vocab, stop_at_sentence_end) &&
           static_cast<int>(h.tokens.size()) < max_tokens) {
      const auto lp = cursor->next_logprobs();
      const TokenId t = argmax_token(lp);
      h.tokens.push_back(t);
      h.logprobs.push_back(lp[static_cast<std::size_t>(t)]);
      cursor->push(t);
    }
    done.push_back(finish_unit(std::move(h), vocab, stop_at_sentence_end));
  }
  return done;
}

std::vector<SampledSentence> expand_beam(const LanguageModel& lm, const QAItem& item, const Beam& beam, int m,
                                         const InferenceConfig& cfg, std::uint64_t step_seed) {
  if (beam.finished) throw LMError("cannot expand a finished beam");
  if (m <= 0) return {};
  const auto state = lm.start(make_context(item, lm.vocab(), beam.sentences.sentences, true));
  const auto& td = cfg.token_decode;
  switch (td.kind) {
    case TokenDecodeKind::Greedy: {
      auto st = state->clone();
      return {greedy_sentence(*st, lm.vocab(), cfg.max_tokens, cfg.stop_at_sentence_end)};
    }
    case TokenDecodeKind::Beam:
      return top_k_sentences(*state, lm.vocab(), m, cfg.max_tokens, cfg.stop_at_sentence_end, td.expansion_budget);
    case TokenDecodeKind::Sample: {
      SamplingConfig sc = td.sampling;
      sc.max_tokens = cfg.max_tokens;
      sc.stop_at_sentence_end = cfg.stop_at_sentence_end;
      std::vector<SampledSentence> out;
      for (int i = 0; i < m; ++i) {
        auto st = state->clone();
        SampledSentence s = sample_sentence(*st, lm.vocab(), sc, derive_seed(step_seed, {static_cast<std::uint64_t>(i)}));
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
      }
      return out;
    }
  }
  return {};
}

namespace {

GenerationResult to_result(const Beam& b, const Vocabulary& vocab) {
  GenerationResult r;
  r.sentences = b.sentences.sentences;
  r.answer = answer_text(r.sentences, vocab);
  r.score = b.scores;
  r.finished = b.finished;
  r.truncated = b.truncated;
  return r;
}

Beam extend(const Beam& b, SampledSentence s) {
  Beam nb = b;
  nb.scores = extend_path(b.scores, score_from_logprobs(s.logprobs));
  nb.finished = s.terminal;
  nb.truncated = b.truncated || s.truncated;
  nb.sentences.terminal = s.terminal;
  nb.sentences.sentences.push_back(std::move(s.tokens));
  return nb;
}

void validate(const InferenceConfig& cfg) {
  if (cfg.num_beams < 1 || cfg.beam_width < 1 || cfg.max_steps < 1 || cfg.max_tokens < 1) {
    throw LMError("num_beams, beam_width, max_steps and max_tokens must be positive");
  }
}

}  // namespace

GenerationResult generate_greedy(const LanguageModel& lm, const QAItem& item, const InferenceConfig& cfg) {
  validate(cfg);
  auto state = lm.start(make_context(item, lm.vocab(), {}, true));
  Beam b;
  for (int step = 0; step < cfg.max_steps && !b.finished; ++step) {
    b = extend(b, greedy_sentence(*state, lm.vocab(), cfg.max_tokens, cfg.stop_at_sentence_end));
  }
  return to_result(b, lm.vocab());
}

GenerationResult hierarchical_generate(const LanguageModel& lm, const QAItem& item, const InferenceConfig& cfg) {
  validate(cfg);
  std::vector<Beam> beams(1);
  for (int step = 0; step < cfg.max_steps; ++step) {
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.finished; })) break;
    std::vector<Beam> pool;
    for (const auto& b : beams) {
      if (b.finished) pool.push_back(b);
    }
    bool any_new = false;
    for (std::size_t bi = 0; bi < beams.size(); ++bi) {
      if (beams[bi].finished) continue;
      const std::uint64_t seed = derive_seed(cfg.token_decode.seed, {static_cast<std::uint64_t>(step), bi});
      for (auto& cand : expand_beam(lm, item, beams[bi], cfg.beam_width, cfg, seed)) {
        pool.push_back(extend(beams[bi], std::move(cand)));
        any_new = true;
      }
    }
    if (!any_new) {
      if (step == 0) throw LMError("no viable continuation for item '" + item.id + "'");
      break;
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Beam& a, const Beam& b) { return a.scores.normalized > b.scores.normalized; });
    if (static_cast<int>(pool.size()) > cfg.num_beams) pool.resize(static_cast<std::size_t>(cfg.num_beams));
    beams = std::move(pool);
  }
  return to_result(beams.front(), lm.vocab());
}

std::vector<SampledSentence> segment_stream(const TokenSeq& tokens, const std::vector<double>& logprobs,
                                            const Vocabulary& vocab) {
  std::vector<SampledSentence> out;
  SampledSentence cur;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    cur.tokens.push_back(tokens[i]);
    cur.logprobs.push_back(logprobs[i]);
    if (tokens[i] == vocab.eos() || vocab.is_sentence_end(tokens[i])) {
      cur.terminal = tokens[i] == vocab.eos();
      out.push_back(std::move(cur));
      cur = {};
    }
  }
  if (!cur.tokens.empty()) {
    cur.truncated = true;
    out.push_back(std::move(cur));
  }
  return out;
}

GenerationResult beam_generate(const LanguageModel& lm, const QAItem& item, const InferenceConfig& cfg) {
  validate(cfg);
  struct TokBeam {
    std::shared_ptr<DecodeState> state;
    TokenSeq tokens;
    std::vector<double> logprobs;
    double logp = 0.0;
    bool finished = false;
  };
  const int width = cfg.num_beams;
  const int cap = cfg.max_steps * cfg.max_tokens;
  std::vector<TokBeam> beams(1);
  beams[0].state = std::shared_ptr<DecodeState>(lm.start(make_context(item, lm.vocab(), {}, true)));

  for (int len = 0; len < cap; ++len) {
    if (std::all_of(beams.begin(), beams.end(), [](const TokBeam& b) { return b.finished; })) break;
    struct Cand {
      std::size_t beam;
      TokenId token;
      double logp;
    };
    std::vector<Cand> cands;
    for (std::size_t bi = 0; bi < beams.size(); ++bi) {
      if (beams[bi].finished) {
        cands.push_back({bi, -1, beams[bi].logp});
        continue;
      }
      const auto lp = beams[bi].state->next_logprobs();
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (std::isfinite(lp[t])) cands.push_back({bi, static_cast<TokenId>(t), beams[bi].logp + lp[t]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
    if (static_cast<int>(cands.size()) > width) cands.resize(static_cast<std::size_t>(width));
    std::vector<TokBeam> next;
    for (const auto& c : cands) {
      if (c.token < 0) {
        next.push_back(beams[c.beam]);
        continue;
      }
      TokBeam nb = beams[c.beam];
      const double lp = nb.state->next_logprobs()[static_cast<std::size_t>(c.token)];
      nb.state = std::shared_ptr<DecodeState>(nb.state->clone());
      nb.state->push(c.token);
      nb.tokens.push_back(c.token);
      nb.logprobs.push_back(lp);
      nb.logp = c.logp;
      nb.finished = c.token == lm.eos_id();
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }
  const auto norm = [](const TokBeam& b) { return b.tokens.empty() ? 0.0 : b.logp / static_cast<double>(b.tokens.size()); };
  std::size_t best = 0;
  for (std::size_t i = 1; i < beams.size(); ++i) {
    if (norm(beams[i]) > norm(beams[best])) best = i;
  }
  Beam out;
  for (auto& s : segment_stream(beams[best].tokens, beams[best].logprobs, lm.vocab())) out = extend(out, std::move(s));
  out.finished = beams[best].finished;
  return to_result(out, lm.vocab());
}

}  // namespace gendie
