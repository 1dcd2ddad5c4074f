#include "gendie/harness.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gendie/treesample.hpp"

namespace gendie {

using nlohmann::json;

bool hit(std::string_view answer, std::span<const std::vector<std::string>> short_answer_sets) {
  return !short_answer_sets.empty() && em_recall(answer, short_answer_sets) == 1.0;
}

namespace {

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{normalize_answer(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double multiset_f1(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : b) ++counts[w];
  int common = 0;
  for (const auto& w : a) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(a.size());
  const double r = static_cast<double>(common) / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace

double lexical_support(std::string_view sentence, std::span<const std::string> passages) {
  const auto s = words_of(sentence);
  if (s.empty()) return 0.0;
  double best = 0.0;
  for (const auto& p : passages) {
    for (const auto& ps : split_sentences(p)) best = std::max(best, multiset_f1(s, words_of(ps)));
  }
  return best;
}

double LexicalSupportJudge::judge(const std::string& sentence, const std::vector<std::string>& passages) {
  return lexical_support(sentence, passages);
}

ExternalCommandJudge::ExternalCommandJudge(std::string command) : command_(std::move(command)) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw EvalError(std::string("pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw EvalError(std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = fork();
  if (pid_ < 0) throw EvalError(std::string("fork: ") + std::strerror(errno));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  signal(SIGPIPE, SIG_IGN);
}

ExternalCommandJudge::~ExternalCommandJudge() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

double ExternalCommandJudge::judge(const std::string& sentence, const std::vector<std::string>& passages) {
  const std::string req = json{{"sentence", sentence}, {"passages", passages}}.dump() + "\n";
  std::size_t off = 0;
  while (off < req.size()) {
    const ssize_t n = write(to_child_, req.data() + off, req.size() - off);
    if (n <= 0) throw EvalError("judge command '" + command_ + "' closed its input");
    off += static_cast<std::size_t>(n);
  }
  std::size_t nl;
  while ((nl = buffer_.find('\n')) == std::string::npos) {
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n <= 0) throw EvalError("judge command '" + command_ + "' ended without a response");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  const std::string line = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  double score = 0.0;
  try {
    score = json::parse(line).at("score").get<double>();
  } catch (const std::exception& e) {
    throw EvalError("malformed judge response '" + line + "': " + e.what());
  }
  if (!(score >= 0.0 && score <= 1.0)) throw EvalError("judge score outside [0, 1]: " + line);
  return score;
}

std::string answers_to_jsonl(std::span<const AnswerRecord> answers) {
  std::string out;
  for (const auto& a : answers) {
    json j = {{"id", a.id}, {"answer", a.answer}};
    j["path_score"] = a.path_score ? json(*a.path_score) : json(nullptr);
    j["mode"] = a.mode;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<AnswerRecord> parse_answers(std::string_view jsonl, const std::string& source_name) {
  std::vector<AnswerRecord> out;
  std::istringstream in{std::string(jsonl)};
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      AnswerRecord r;
      r.id = j.at("id").get<std::string>();
      r.answer = j.at("answer").get<std::string>();
      if (j.contains("path_score") && !j["path_score"].is_null()) r.path_score = j["path_score"].get<double>();
      r.mode = j.value("mode", std::string());
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw EvalError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<AnswerRecord> load_answers(const std::filesystem::path& path) {
  return parse_answers(read_text_file(path), path.string());
}

json EvalReport::to_json() const {
  json rows = json::array();
  for (const auto& r : per_item) {
    rows.push_back({{"id", r.id},
                    {"em_recall", r.em_recall},
                    {"hit", r.hit},
                    {"faithfulness", r.faithfulness},
                    {"sentences", r.sentences}});
  }
  return {{"em_recall", em_recall},
          {"hit", hit},
          {"faithfulness_proxy", faithfulness_proxy},
          {"judge", judge},
          {"items", per_item.size()},
          {"per_item", std::move(rows)}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "id,em_recall,hit,faithfulness,sentences\n";
  for (const auto& r : per_item) {
    out << r.id << ',' << r.em_recall << ',' << (r.hit ? 1 : 0) << ',' << r.faithfulness << ',' << r.sentences
        << '\n';
  }
  return out.str();
}

EvalReport evaluate(std::span<const AnswerRecord> answers, std::span<const QAItem> corpus, FaithfulnessJudge& judge,
                    bool allow_empty) {
  if (answers.empty() && !allow_empty) throw EvalError("no answers to evaluate");
  std::map<std::string, const QAItem*> by_id;
  for (const auto& item : corpus) by_id[item.id] = &item;
  std::vector<std::string> missing;
  for (const auto& a : answers) {
    if (!by_id.count(a.id)) missing.push_back(a.id);
  }
  if (!missing.empty()) {
    std::string msg = "answer ids not in corpus:";
    for (const auto& m : missing) msg += " " + m;
    throw EvalError(msg);
  }

  EvalReport rep;
  rep.judge = judge.name();
  for (const auto& a : answers) {
    const QAItem& item = *by_id.at(a.id);
    if (item.short_answers.empty()) throw EvalError("item '" + item.id + "' has no short-answer sets");
    ItemEval row;
    row.id = a.id;
    row.em_recall = em_recall(a.answer, item.short_answers);
    row.hit = hit(a.answer, item.short_answers);
    const auto sentences = split_sentences(a.answer);
    row.sentences = static_cast<int>(sentences.size());
    double sum = 0.0;
    for (const auto& s : sentences) sum += judge.judge(s, item.passages);
    row.faithfulness = sentences.empty() ? 0.0 : sum / static_cast<double>(sentences.size());
    rep.per_item.push_back(std::move(row));
  }
  if (!rep.per_item.empty()) {
    const double n = static_cast<double>(rep.per_item.size());
    for (const auto& r : rep.per_item) {
      rep.em_recall += r.em_recall;
      rep.hit += r.hit ? 1.0 : 0.0;
      rep.faithfulness_proxy += r.faithfulness;
    }
    rep.em_recall /= n;
    rep.hit /= n;
    rep.faithfulness_proxy /= n;
  }
  return rep;
}

}  // namespace gendie
