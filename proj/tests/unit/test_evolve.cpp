#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gendie/evolve.hpp"
#include "gendie/synthetic.hpp"
#include "gendie/treesample.hpp"
#include "test_support.hpp"

using namespace gendie;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PretrainConfig quick_pretrain() {
  PretrainConfig pc;
  pc.steps = 40;
  pc.batch_size = 4;
  pc.model.d_model = 8;
  pc.model.n_heads = 2;
  pc.model.n_layers = 1;
  pc.model.d_ff = 16;
  return pc;
}

IterationPlan quick_plan() {
  IterationPlan plan;
  plan.num_iterations = 2;
  plan.learning_rate = 1e-3;
  plan.batch_size = 4;
  plan.tree.branching = 2;
  plan.tree.max_depth = 2;
  plan.tree.node_budget = 8;
  plan.tree.sampling.max_tokens = 16;
  plan.prestage.sampling.max_tokens = 16;
  plan.inference.num_beams = 2;
  plan.inference.beam_width = 2;
  plan.inference.max_steps = 3;
  plan.inference.max_tokens = 16;
  plan.seed = 5;
  return plan;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(SyntheticCorpus, Shape) {
  const auto world = SyntheticWorld::make({});
  CorpusConfig one;
  one.size = 1;
  EXPECT_EQ(make_synthetic_corpus(world, one).size(), 1u);
  const auto corpus = make_synthetic_corpus(world, {});
  ASSERT_EQ(corpus.size(), 50u);
  std::set<std::string> ids;
  int two = 0;
  const Vocabulary v = world.vocabulary();
  for (const auto& it : corpus) {
    EXPECT_TRUE(ids.insert(it.id).second);
    EXPECT_EQ(it.passages.size(), 3u);
    ASSERT_TRUE(it.gold_answer.has_value());
    EXPECT_DOUBLE_EQ(em_recall(*it.gold_answer, it.short_answers), 1.0);
    two += it.short_answers.size() == 2;
    // Every gold sentence is a verbatim passage.
    for (const auto& s : split_sentences(*it.gold_answer)) {
      EXPECT_NE(std::find(it.passages.begin(), it.passages.end(), s), it.passages.end());
    }
    EXPECT_NO_THROW(v.tokenize(it.question));
  }
  // Two-aspect share is 0.5 in expectation; 3 sigma over 50 draws.
  EXPECT_NEAR(two, 25, 3 * std::sqrt(50 * 0.25));
}

TEST(SyntheticCorpus, SeedsAreIndependentSplits) {
  const auto world = SyntheticWorld::make({});
  CorpusConfig eval;
  eval.seed = 99;
  const auto a = make_synthetic_corpus(world, {});
  const auto b = make_synthetic_corpus(world, eval);
  EXPECT_NE(a[0].id, b[0].id);
  EXPECT_EQ(make_synthetic_corpus(world, {})[7].passages, a[7].passages);
}

TEST(SyntheticWorld, PretrainExamplesFitTheModel) {
  const auto world = SyntheticWorld::make({});
  const Vocabulary v = world.vocabulary();
  const PretrainConfig pc = quick_pretrain();
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto ex = sample_pretrain_example(world, v, pc, s);
    EXPECT_FALSE(ex.target.empty());
    EXPECT_EQ(ex.target.back(), v.eos());
    EXPECT_EQ(ex.context.front(), v.bos());
  }
}

TEST(AnswerLevelMode, WholeAnswerIsOneUnit) {
  const IterationPlan plan;
  const IterationPlan al = answer_level_mode(plan);
  EXPECT_TRUE(al.answer_level);
  EXPECT_TRUE(al.prestage.answer_level);
  EXPECT_EQ(al.tree.max_depth, 1);
  EXPECT_FALSE(al.tree.sampling.stop_at_sentence_end);
  EXPECT_EQ(plan_segments(al, "A. B."), (std::vector<std::string>{"A. B."}));
  EXPECT_EQ(plan_segments(plan, "A. B."), (std::vector<std::string>{"A.", "B."}));
}

TEST(IterationPlan, JsonRoundTripAndHash) {
  IterationPlan plan = quick_plan();
  plan.continue_from_previous = false;
  plan.inference.token_decode.kind = TokenDecodeKind::Sample;
  const IterationPlan back = IterationPlan::from_json(plan.to_json());
  EXPECT_EQ(back.to_json(), plan.to_json());
  EXPECT_EQ(back.hash(), plan.hash());
  IterationPlan other = plan;
  other.learning_rate *= 2;
  EXPECT_NE(other.hash(), plan.hash());
}

TEST(RunEvolution, DeterministicWithLineage) {
  const auto world = SyntheticWorld::make({});
  const ToyLM base = pretrain_base_model(world, quick_pretrain());
  CorpusConfig cc;
  cc.size = 4;
  const auto corpus = make_synthetic_corpus(world, cc);
  CorpusConfig ec = cc;
  ec.seed = 99;
  const auto eval = make_synthetic_corpus(world, ec);
  const IterationPlan plan = quick_plan();

  const fs::path d1 = fresh_dir("gendie_evolve_a"), d2 = fresh_dir("gendie_evolve_b");
  const RunManifest m1 = run_evolution(plan, base, corpus, eval, d1);
  const RunManifest m2 = run_evolution(plan, base, corpus, eval, d2);
  ASSERT_TRUE(m1.completed) << m1.error;
  EXPECT_EQ(m1.to_json(), m2.to_json());
  EXPECT_EQ(slurp(d1 / "manifest.json"), slurp(d2 / "manifest.json"));

  ASSERT_EQ(m1.iterations.size(), 2u);
  EXPECT_EQ(m1.iterations[0].stage, "prestage");
  EXPECT_EQ(m1.iterations[1].stage, "treesample");
  EXPECT_EQ(m1.iterations[0].source_params_hash, base.parameter_hash());
  EXPECT_EQ(m1.iterations[1].source_params_hash, m1.iterations[0].params_hash);
  EXPECT_EQ(m1.plan_hash, plan.hash());
  for (const auto& it : m1.iterations) {
    EXPECT_EQ(slurp(d1 / it.dataset_path), slurp(d2 / it.dataset_path));
    EXPECT_EQ(content_hash(slurp(d1 / it.dataset_path)), it.dataset_hash);
    const ToyLM ck = ToyLM::load(d1 / it.checkpoint_path);
    EXPECT_EQ(ck.parameter_hash(), it.params_hash);
    EXPECT_EQ(ck.config_hash(), it.config_hash);
    std::istringstream log(slurp(d1 / it.train_log_path));
    int lines = 0;
    for (std::string line; std::getline(log, line);) {
      const auto j = nlohmann::json::parse(line);
      EXPECT_TRUE(j.contains("step") && j.contains("lm") && j.contains("disc") && j.contains("total"));
      ++lines;
    }
    EXPECT_EQ(lines, it.train_steps);
    EXPECT_TRUE(it.hierarchical.has_value());
    const fs::path dir = (d1 / it.checkpoint_path).parent_path();
    EXPECT_EQ(slurp(dir / "answers_greedy.jsonl"), slurp(d2 / fs::relative(dir, d1) / "answers_greedy.jsonl"));
  }
}

TEST(RunEvolution, RestartTrainsFromBaseButSamplesWithLatest) {
  const auto world = SyntheticWorld::make({});
  const ToyLM base = pretrain_base_model(world, quick_pretrain());
  CorpusConfig cc;
  cc.size = 3;
  const auto corpus = make_synthetic_corpus(world, cc);
  IterationPlan plan = quick_plan();
  plan.eval_hierarchical = false;
  const RunManifest cont = run_evolution(plan, base, corpus, {}, fresh_dir("gendie_evolve_c"));
  plan.continue_from_previous = false;
  const RunManifest restart = run_evolution(plan, base, corpus, {}, fresh_dir("gendie_evolve_d"));
  ASSERT_TRUE(cont.completed && restart.completed) << cont.error << restart.error;
  EXPECT_EQ(restart.iterations[0].params_hash, cont.iterations[0].params_hash);
  EXPECT_EQ(restart.iterations[1].source_params_hash, restart.iterations[0].params_hash);
  EXPECT_EQ(restart.iterations[1].dataset_hash, cont.iterations[1].dataset_hash);
  EXPECT_NE(restart.iterations[1].params_hash, cont.iterations[1].params_hash);
  for (const auto& it : restart.iterations) EXPECT_FALSE(it.hierarchical.has_value());
}
