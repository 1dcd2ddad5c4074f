#include <gtest/gtest.h>

#include <cmath>

#include "gendie/scoring.hpp"
#include "gendie/training.hpp"
#include "test_support.hpp"

using namespace gendie;

namespace {

std::vector<TrainingExample> random_batch(const Vocabulary& v, Rng& rng, int n) {
  std::vector<TrainingExample> out;
  const QAItem item = fixtures::tiny_item();
  for (int i = 0; i < n; ++i) {
    std::vector<TokenSeq> prefix;
    if (rng.bernoulli(0.5)) prefix.push_back(fixtures::random_sentence(v, rng, 2));
    TrainingExample ex{item.id, make_context(item, v, prefix, rng.bernoulli(0.8)), fixtures::random_sentence(v, rng, 3), {}};
    do ex.negative = fixtures::random_sentence(v, rng, 3);
    while (ex.negative == ex.target);
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST(PairGradient, MatchesCentralDifferences) {
  ToyLM m = fixtures::tiny_toy(21);
  Rng rng(21);
  const auto batch = random_batch(m.vocab(), rng, 3);
  const CombinedObjective obj{0.7, 1.0};
  std::vector<double> grad;
  pair_loss_and_gradient(m, batch, obj, &grad);
  auto params = m.parameters();
  const double h = 1e-5;
  double worst = 0.0;
  for (int k = 0; k < 300; ++k) {
    const std::size_t i = rng.below(params.size());
    const double orig = params[i];
    params[i] = orig + h;
    const double up = pair_loss_and_gradient(m, batch, obj, nullptr);
    params[i] = orig - h;
    const double down = pair_loss_and_gradient(m, batch, obj, nullptr);
    params[i] = orig;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(PairGradient, LanguageModelGradientMatchesCentralDifferences) {
  ToyLM m = fixtures::tiny_toy(22);
  Rng rng(22);
  std::vector<LMExample> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back({m.vocab().tokenize("q p x."), fixtures::random_sentence(m.vocab(), rng, 4)});
  }
  std::vector<double> grad;
  lm_loss_and_gradient(m, batch, &grad);
  auto params = m.parameters();
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = rng.below(params.size());
    const double orig = params[i];
    params[i] = orig + h;
    const double up = lm_loss_and_gradient(m, batch, nullptr);
    params[i] = orig - h;
    const double down = lm_loss_and_gradient(m, batch, nullptr);
    params[i] = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-4 * std::max({std::abs(fd), std::abs(grad[i]), 1e-4}));
  }
}

TEST(PairGradient, DiscriminationStepWidensScoreGap) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ToyLM m = fixtures::tiny_toy(seed);
    Rng rng(seed);
    const auto batch = random_batch(m.vocab(), rng, 1);
    const auto& ex = batch[0];
    auto gap = [&] {
      return normalized_logprob(token_logprobs(m, ex.context, ex.target)) -
             normalized_logprob(token_logprobs(m, ex.context, ex.negative));
    };
    const double before = gap();
    Sgd sgd;
    train_step(m, sgd, batch, CombinedObjective{1.0, 0.0}, 1e-3);
    EXPECT_GT(gap(), before) << "seed " << seed;
  }
}

TEST(ClipGradient, CapsNorm) {
  std::vector<double> g{3.0, 4.0};
  clip_gradient(g, 1.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  std::vector<double> small{0.1, 0.1};
  clip_gradient(small, 1.0);
  EXPECT_EQ(small, (std::vector<double>{0.1, 0.1}));
  clip_gradient(g, 0.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
}

TEST(TrainEpoch, DeterministicAndCoversAllBatches) {
  Rng rng(30);
  const ToyLM base = fixtures::tiny_toy(30);
  const auto data = random_batch(base.vocab(), rng, 10);
  EpochConfig cfg;
  cfg.batch_size = 4;
  ToyLM m1 = base, m2 = base;
  AdamW o1, o2;
  const auto log1 = train_epoch(m1, o1, data, CombinedObjective{}, cfg, 5);
  const auto log2 = train_epoch(m2, o2, data, CombinedObjective{}, cfg, 5);
  ASSERT_EQ(log1.size(), 3u);
  EXPECT_EQ(m1.parameter_hash(), m2.parameter_hash());
  for (std::size_t i = 0; i < log1.size(); ++i) {
    EXPECT_EQ(log1[i].step, static_cast<std::int64_t>(i + 1));
    EXPECT_EQ(log1[i].loss.total, log2[i].loss.total);
  }
  ToyLM m3 = base;
  AdamW o3;
  train_epoch(m3, o3, data, CombinedObjective{}, cfg, 6);
  EXPECT_NE(m3.parameter_hash(), m1.parameter_hash());
  EXPECT_TRUE(train_epoch(m3, o3, std::vector<TrainingExample>{}, CombinedObjective{}, cfg, 1).empty());
}
