#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "gendie/objective.hpp"
#include "gendie/toy_lm.hpp"

namespace gendie {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<double> params, std::span<const double> grad, double learning_rate) = 0;
};

class Sgd final : public Optimizer {
 public:
  void step(std::span<double> params, std::span<const double> grad, double learning_rate) override;
};

// Adam with decoupled weight decay.
class AdamW final : public Optimizer {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  explicit AdamW(Config cfg) : cfg_(cfg) {}
  void step(std::span<double> params, std::span<const double> grad, double learning_rate) override;

 private:
  Config cfg_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

// Batch-mean pair loss for the toy model; writes d(mean loss)/dparams into
// `grad` (resized and zeroed) when non-null.
double pair_loss_and_gradient(const ToyLM& model, std::span<const TrainingExample> batch, const PairLossFn& loss_fn,
                              std::vector<double>* grad, LossBreakdown* mean_breakdown = nullptr);

// One optimizer step on the batch-mean loss; returns the pre-update loss.
double train_step(ToyLM& model, Optimizer& opt, std::span<const TrainingExample> batch, const PairLossFn& loss_fn,
                  double learning_rate, LossBreakdown* mean_breakdown = nullptr, double grad_clip = 0.0);

// Plain next-token modelling of `target` after `context` (base-model
// pretraining); mean NLL over target tokens, averaged over the batch.
struct LMExample {
  TokenSeq context;
  TokenSeq target;
};

double lm_loss_and_gradient(const ToyLM& model, std::span<const LMExample> batch, std::vector<double>* grad);
double lm_train_step(ToyLM& model, Optimizer& opt, std::span<const LMExample> batch, double learning_rate,
                     double grad_clip = 0.0);

struct StepLog {
  std::int64_t step = 0;
  LossBreakdown loss;
};

struct EpochConfig {
  int batch_size = 8;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;
};

// One shuffled pass over `examples`.
std::vector<StepLog> train_epoch(ToyLM& model, Optimizer& opt, std::span<const TrainingExample> examples,
                                 const PairLossFn& loss_fn, const EpochConfig& cfg, std::uint64_t seed);

// Scales `grad` in place so its L2 norm is at most max_norm (no-op for max_norm <= 0).
void clip_gradient(std::span<double> grad, double max_norm);

}  // namespace gendie
