#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gendie/corpus.hpp"
#include "gendie/harness.hpp"
#include "gendie/inference.hpp"
#include "gendie/prestage.hpp"
#include "gendie/toy_lm.hpp"
#include "gendie/treesample.hpp"

namespace gendie {

class EvolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IterationPlan {
  int num_iterations = 3;
  int epochs_per_iteration = 1;
  double objective_lambda = 0.5;
  double learning_rate = 7e-5;
  int batch_size = 8;
  double grad_clip = 1.0;
  // Off: every iteration restarts from the base model on its new data.
  bool continue_from_previous = true;
  bool answer_level = false;
  bool eval_hierarchical = true;
  TreeConfig tree;
  InferenceConfig inference;
  PrestageConfig prestage;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static IterationPlan from_json(const nlohmann::json& j);
  std::string hash() const;
};

// Whole answers become single units: one gold unit per item, depth-1 trees,
// units closed only by <eos>.
IterationPlan answer_level_mode(const IterationPlan& plan);

// Splits text into training units under the plan's granularity.
std::vector<std::string> plan_segments(const IterationPlan& plan, std::string_view answer);

struct EvalSummary {
  double em_recall = 0.0;
  double hit = 0.0;
  double faithfulness_proxy = 0.0;

  nlohmann::json to_json() const;
};

struct IterationRecord {
  int iteration = 0;
  std::string stage;  // "prestage" or "treesample"
  std::string dataset_path;
  std::string dataset_hash;
  int pairs = 0;
  nlohmann::json data_stats;
  std::string source_params_hash;
  std::string checkpoint_path;
  std::string params_hash;
  std::string config_hash;
  std::string train_log_path;
  int train_steps = 0;
  nlohmann::json mean_loss;
  EvalSummary greedy;
  std::optional<EvalSummary> hierarchical;

  nlohmann::json to_json() const;
};

struct RunManifest {
  nlohmann::json plan;
  std::string plan_hash;
  std::string base_params_hash;
  std::string base_config_hash;
  std::string corpus_hash;
  std::string eval_corpus_hash;
  std::vector<IterationRecord> iterations;
  bool completed = false;
  std::string error;

  nlohmann::json to_json() const;
};

// Answers for every item under one decoding mode ("greedy", "beam" or
// "hierarchical").
std::vector<AnswerRecord> generate_answers(const LanguageModel& lm, std::span<const QAItem> corpus,
                                           const InferenceConfig& cfg, const std::string& mode);

// Iteration 1 trains on pre-stage pairs; each later iteration samples trees
// with the latest checkpoint, extracts pairs and trains one more round.
// Artifacts go under out_dir (paths in the manifest are relative to it);
// manifest.json is rewritten after every iteration. Evaluation runs on
// eval_corpus (the training corpus when empty).
RunManifest run_evolution(const IterationPlan& plan, const ToyLM& base, std::span<const QAItem> corpus,
                          std::span<const QAItem> eval_corpus, const std::filesystem::path& out_dir);

std::string content_hash(std::string_view bytes);

}  // namespace gendie
