#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gendie/corpus.hpp"
#include "gendie/lm.hpp"

namespace gendie {

class ObjectiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultLambda = 0.5;
// Probabilities are kept inside [1e-9, 1 - 1e-9] before the odds ratio.
inline constexpr double kProbabilityClamp = 1e-9;

struct LossBreakdown {
  double lm_term = 0.0;    // -log P(a | q, P, prefix), length-normalized
  double disc_term = 0.0;  // -log sigmoid(log odds ratio of a over a')
  double total = 0.0;      // lm_term + lambda * disc_term
  double lambda = kDefaultLambda;
};

// log[p_a (1 - p_a')] - log[p_a' (1 - p_a)] for log-probabilities in (-inf, 0).
double odds_ratio_logit(double logp_a, double logp_aprime);

// Loss value plus its derivatives with respect to the two normalized
// log-probabilities; what a trainer needs to backpropagate.
struct PairGradient {
  LossBreakdown loss;
  double d_logp_target = 0.0;
  double d_logp_negative = 0.0;
  bool clamped = false;
};

// Combined generation + discrimination objective (minimized form).
// lm_weight exists so the discrimination term can be probed in isolation.
struct CombinedObjective {
  double lambda = kDefaultLambda;
  double lm_weight = 1.0;

  PairGradient operator()(double logp_target, double logp_negative) const;
};

using PairLossFn = std::function<PairGradient(double logp_target, double logp_negative)>;

// ContrastiveInstance joined with its item: both sentences are conditioned on
// the same (q, P, prefix) context.
struct TrainingExample {
  std::string item_id;
  LMContext context;
  TokenSeq target;
  TokenSeq negative;
};

TrainingExample resolve_instance(const ContrastiveInstance& inst, std::span<const QAItem> corpus,
                                 const Vocabulary& vocab);
std::vector<TrainingExample> resolve_instances(std::span<const ContrastiveInstance> instances,
                                               std::span<const QAItem> corpus, const Vocabulary& vocab);

LossBreakdown instance_loss(const LanguageModel& lm, const TrainingExample& example, double lambda);
// Mean of instance totals.
double batch_loss(const LanguageModel& lm, std::span<const TrainingExample> batch, double lambda);

}  // namespace gendie
