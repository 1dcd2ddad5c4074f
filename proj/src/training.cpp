#include "gendie/training.hpp"

#include <cmath>
#include <numeric>

#include "gendie/rng.hpp"
#include "gendie/scoring.hpp"

namespace gendie {

void Sgd::step(std::span<double> params, std::span<const double> grad, double learning_rate) {
  if (params.size() != grad.size()) throw TrainingError("gradient size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * grad[i];
}

void AdamW::step(std::span<double> params, std::span<const double> grad, double learning_rate) {
  if (params.size() != grad.size()) throw TrainingError("gradient size mismatch");
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double update = (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps) + cfg_.weight_decay * params[i];
    params[i] -= learning_rate * update;
  }
}

void clip_gradient(std::span<double> grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
}

namespace {

// One teacher-forced pass over context + sentence. Row `first_row + i` of
// `logprobs` is the distribution that produced sentence[i].
struct SentencePass {
  ForwardCache cache;
  RowMatrix logprobs;
  Eigen::Index first_row = 0;
  std::vector<double> token_lps;
};

SentencePass run_sentence(const ToyLM& model, const TokenSeq& context, const TokenSeq& sentence) {
  if (sentence.empty()) throw TrainingError("empty sentence");
  if (context.empty()) throw TrainingError("empty context");
  SentencePass p;
  TokenSeq input = context;
  input.insert(input.end(), sentence.begin(), sentence.end() - 1);
  p.logprobs = log_softmax_rows(model.forward(input, &p.cache));
  p.first_row = static_cast<Eigen::Index>(context.size()) - 1;
  p.token_lps.resize(sentence.size());
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    p.token_lps[i] = p.logprobs(p.first_row + static_cast<Eigen::Index>(i), sentence[i]);
  }
  return p;
}

// Backpropagates a uniform weight `w` on every sentence-token log-prob.
void backprop_sentence(const ToyLM& model, const SentencePass& p, const TokenSeq& sentence, double w,
                       std::vector<double>& grad) {
  if (w == 0.0) return;
  RowMatrix d = RowMatrix::Zero(p.logprobs.rows(), p.logprobs.cols());
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    const Eigen::Index r = p.first_row + static_cast<Eigen::Index>(i);
    d.row(r) = -w * p.logprobs.row(r).array().exp();
    d(r, sentence[i]) += w;
  }
  model.backward(p.cache, d, grad);
}

}  // namespace

double pair_loss_and_gradient(const ToyLM& model, std::span<const TrainingExample> batch, const PairLossFn& loss_fn,
                              std::vector<double>* grad, LossBreakdown* mean_breakdown) {
  if (batch.empty()) throw TrainingError("empty batch");
  if (grad) grad->assign(model.num_parameters(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossBreakdown mean{};
  double total = 0.0;

  for (std::size_t idx = 0; idx < batch.size(); ++idx) {
    const TrainingExample& ex = batch[idx];
    const TokenSeq ctx = serialize_context(ex.context, model.vocab());
    const SentencePass pa = run_sentence(model, ctx, ex.target);
    const SentencePass pb = run_sentence(model, ctx, ex.negative);
    const double la = normalized_logprob(pa.token_lps);
    const double lb = normalized_logprob(pb.token_lps);
    const PairGradient pg = loss_fn(la, lb);
    if (!std::isfinite(pg.loss.total)) {
      throw TrainingError("non-finite loss at batch index " + std::to_string(idx) + " (item '" + ex.item_id +
                          "', log P(a)=" + std::to_string(la) + ", log P(a')=" + std::to_string(lb) + ")");
    }
    total += pg.loss.total;
    mean.lm_term += pg.loss.lm_term * inv_n;
    mean.disc_term += pg.loss.disc_term * inv_n;
    mean.lambda = pg.loss.lambda;
    if (grad) {
      // d normalized / d token-lp = 1/|a|
      backprop_sentence(model, pa, ex.target, pg.d_logp_target * inv_n / static_cast<double>(ex.target.size()), *grad);
      backprop_sentence(model, pb, ex.negative,
                        pg.d_logp_negative * inv_n / static_cast<double>(ex.negative.size()), *grad);
    }
  }
  mean.total = total * inv_n;
  if (mean_breakdown) *mean_breakdown = mean;
  return mean.total;
}

double train_step(ToyLM& model, Optimizer& opt, std::span<const TrainingExample> batch, const PairLossFn& loss_fn,
                  double learning_rate, LossBreakdown* mean_breakdown, double grad_clip) {
  std::vector<double> grad;
  const double loss = pair_loss_and_gradient(model, batch, loss_fn, &grad, mean_breakdown);
  clip_gradient(grad, grad_clip);
  opt.step(model.parameters(), grad, learning_rate);
  if (!model.parameters_finite()) throw TrainingError("parameters became non-finite after an update");
  model.set_step_count(model.step_count() + 1);
  return loss;
}

double lm_loss_and_gradient(const ToyLM& model, std::span<const LMExample> batch, std::vector<double>* grad) {
  if (batch.empty()) throw TrainingError("empty batch");
  if (grad) grad->assign(model.num_parameters(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t idx = 0; idx < batch.size(); ++idx) {
    const LMExample& ex = batch[idx];
    const SentencePass p = run_sentence(model, ex.context, ex.target);
    const double nll = -normalized_logprob(p.token_lps);
    if (!std::isfinite(nll)) throw TrainingError("non-finite LM loss at batch index " + std::to_string(idx));
    total += nll;
    if (grad) backprop_sentence(model, p, ex.target, -inv_n / static_cast<double>(ex.target.size()), *grad);
  }
  return total * inv_n;
}

double lm_train_step(ToyLM& model, Optimizer& opt, std::span<const LMExample> batch, double learning_rate,
                     double grad_clip) {
  std::vector<double> grad;
  const double loss = lm_loss_and_gradient(model, batch, &grad);
  clip_gradient(grad, grad_clip);
  opt.step(model.parameters(), grad, learning_rate);
  if (!model.parameters_finite()) throw TrainingError("parameters became non-finite after an update");
  model.set_step_count(model.step_count() + 1);
  return loss;
}

std::vector<StepLog> train_epoch(ToyLM& model, Optimizer& opt, std::span<const TrainingExample> examples,
                                 const PairLossFn& loss_fn, const EpochConfig& cfg, std::uint64_t seed) {
  std::vector<StepLog> log;
  if (examples.empty()) return log;
  if (cfg.batch_size <= 0) throw TrainingError("batch size must be positive");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<TrainingExample> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
    StepLog entry;
    train_step(model, opt, batch, loss_fn, cfg.learning_rate, &entry.loss, cfg.grad_clip);
    entry.step = model.step_count();
    log.push_back(entry);
  }
  return log;
}

}  // namespace gendie
