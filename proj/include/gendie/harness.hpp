#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gendie/corpus.hpp"

namespace gendie {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every aspect covered.
bool hit(std::string_view answer, std::span<const std::vector<std::string>> short_answer_sets);

// Best multiset token F1 between the sentence and any passage sentence, on
// normalized tokens.
double lexical_support(std::string_view sentence, std::span<const std::string> passages);

class FaithfulnessJudge {
 public:
  virtual ~FaithfulnessJudge() = default;
  // Support of `sentence` by the passages, in [0, 1].
  virtual double judge(const std::string& sentence, const std::vector<std::string>& passages) = 0;
  virtual std::string name() const = 0;
};

class LexicalSupportJudge final : public FaithfulnessJudge {
 public:
  double judge(const std::string& sentence, const std::vector<std::string>& passages) override;
  std::string name() const override { return "proxy"; }
};

// Talks to a child process over its standard streams, one JSON object per
// line: {"sentence", "passages"} in, {"score"} out.
class ExternalCommandJudge final : public FaithfulnessJudge {
 public:
  explicit ExternalCommandJudge(std::string command);
  ~ExternalCommandJudge() override;
  ExternalCommandJudge(const ExternalCommandJudge&) = delete;
  ExternalCommandJudge& operator=(const ExternalCommandJudge&) = delete;

  double judge(const std::string& sentence, const std::vector<std::string>& passages) override;
  std::string name() const override { return "external-command"; }

 private:
  std::string command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

struct AnswerRecord {
  std::string id;
  std::string answer;
  std::optional<double> path_score;
  std::string mode;

  bool operator==(const AnswerRecord&) const = default;
};

std::string answers_to_jsonl(std::span<const AnswerRecord> answers);
std::vector<AnswerRecord> parse_answers(std::string_view jsonl, const std::string& source_name = "<memory>");
std::vector<AnswerRecord> load_answers(const std::filesystem::path& path);

struct ItemEval {
  std::string id;
  double em_recall = 0.0;
  bool hit = false;
  double faithfulness = 0.0;  // mean over answer sentences (0 for an empty answer)
  int sentences = 0;
};

struct EvalReport {
  double em_recall = 0.0;
  double hit = 0.0;
  double faithfulness_proxy = 0.0;
  std::string judge;
  std::vector<ItemEval> per_item;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Aggregates are plain means of the per-item rows. An empty answer set is an
// error unless allow_empty is set.
EvalReport evaluate(std::span<const AnswerRecord> answers, std::span<const QAItem> corpus, FaithfulnessJudge& judge,
                    bool allow_empty = false);

}  // namespace gendie
