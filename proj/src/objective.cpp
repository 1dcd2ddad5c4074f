#include "gendie/objective.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "gendie/scoring.hpp"

namespace gendie {

namespace {

// log(1 - exp(x)) for x < 0.
double log1mexp(double x) { return x > -0.6931471805599453 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x)); }

// -log sigmoid(z)
double neg_log_sigmoid(double z) { return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

// sigmoid(-z)
double sigmoid_neg(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

const double kLogLow = std::log(kProbabilityClamp);
const double kLogHigh = std::log1p(-kProbabilityClamp);

double clamp_logp(double lp, bool& clamped) {
  if (std::isnan(lp)) throw ObjectiveError("log-probability is NaN");
  if (lp > kLogHigh) {
    clamped = true;
    return kLogHigh;
  }
  if (lp < kLogLow) {
    clamped = true;
    return kLogLow;
  }
  return lp;
}

}  // namespace

double odds_ratio_logit(double logp_a, double logp_aprime) {
  if (!(logp_a < 0.0) || !(logp_aprime < 0.0)) {
    throw ObjectiveError("odds ratio needs probabilities strictly below 1 (log-probabilities < 0)");
  }
  return (logp_a - log1mexp(logp_a)) - (logp_aprime - log1mexp(logp_aprime));
}

PairGradient CombinedObjective::operator()(double logp_target, double logp_negative) const {
  if (lambda < 0.0) throw ObjectiveError("lambda must be non-negative");
  PairGradient g;
  const double a = clamp_logp(logp_target, g.clamped);
  const double b = clamp_logp(logp_negative, g.clamped);
  if (g.clamped) {
    spdlog::warn("objective: log-probability clamped to [{:.4g}, {:.4g}] (target {:.6g}, negative {:.6g})", kLogLow,
                 kLogHigh, logp_target, logp_negative);
  }
  const double z = odds_ratio_logit(a, b);
  g.loss.lambda = lambda;
  g.loss.lm_term = -a;
  g.loss.disc_term = neg_log_sigmoid(z);
  g.loss.total = lm_weight * g.loss.lm_term + lambda * g.loss.disc_term;

  // dz/da = 1/(1-p_a), dz/db = -1/(1-p_b), d(-log sig z)/dz = -sig(-z)
  const double s = sigmoid_neg(z);
  const double inv_1m_pa = -1.0 / std::expm1(a);
  const double inv_1m_pb = -1.0 / std::expm1(b);
  const bool a_free = a == logp_target;
  const bool b_free = b == logp_negative;
  g.d_logp_target = a_free ? (-lm_weight - lambda * s * inv_1m_pa) : 0.0;
  g.d_logp_negative = b_free ? (lambda * s * inv_1m_pb) : 0.0;
  return g;
}

TrainingExample resolve_instance(const ContrastiveInstance& inst, std::span<const QAItem> corpus,
                                 const Vocabulary& vocab) {
  if (inst.target == inst.negative) throw ObjectiveError("instance target equals its negative");
  const QAItem& item = find_item(corpus, inst.item_id);
  return {inst.item_id, make_context(item, vocab, inst.prefix, inst.with_passages), inst.target, inst.negative};
}

std::vector<TrainingExample> resolve_instances(std::span<const ContrastiveInstance> instances,
                                               std::span<const QAItem> corpus, const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(resolve_instance(inst, corpus, vocab));
  return out;
}

LossBreakdown instance_loss(const LanguageModel& lm, const TrainingExample& example, double lambda) {
  const double a = normalized_logprob(token_logprobs(lm, example.context, example.target));
  const double b = normalized_logprob(token_logprobs(lm, example.context, example.negative));
  return CombinedObjective{lambda, 1.0}(a, b).loss;
}

double batch_loss(const LanguageModel& lm, std::span<const TrainingExample> batch, double lambda) {
  if (batch.empty()) throw ObjectiveError("empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      sum += instance_loss(lm, batch[i], lambda).total;
    } catch (const std::exception& e) {
      throw ObjectiveError("batch instance " + std::to_string(i) + " (" + batch[i].item_id + "): " + e.what());
    }
  }
  return sum / static_cast<double>(batch.size());
}

}  // namespace gendie
