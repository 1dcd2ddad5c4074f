#include "gendie/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace gendie {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string line_error(const std::string& source, std::size_t line, const std::string& what) {
  return source + ":" + std::to_string(line) + ": " + what;
}

std::vector<std::string> string_list(const json& j, const char* field) {
  if (!j.is_array()) throw CorpusError(std::string("field '") + field + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw CorpusError(std::string("field '") + field + "' must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

QAItem item_from_json(const json& j) {
  if (!j.is_object()) throw CorpusError("line is not a JSON object");
  QAItem item;
  for (const char* f : {"id", "question"}) {
    if (!j.contains(f) || !j.at(f).is_string()) {
      throw CorpusError(std::string("missing or non-string field '") + f + "'");
    }
  }
  item.id = j.at("id").get<std::string>();
  item.question = j.at("question").get<std::string>();
  if (!j.contains("passages")) throw CorpusError("missing field 'passages'");
  item.passages = string_list(j.at("passages"), "passages");
  if (j.contains("gold_answer") && !j.at("gold_answer").is_null()) {
    if (!j.at("gold_answer").is_string()) throw CorpusError("field 'gold_answer' must be a string or null");
    item.gold_answer = j.at("gold_answer").get<std::string>();
  }
  if (j.contains("short_answers")) {
    const json& sa = j.at("short_answers");
    if (!sa.is_array()) throw CorpusError("field 'short_answers' must be an array of string arrays");
    for (const auto& set : sa) {
      auto aliases = string_list(set, "short_answers");
      if (aliases.empty()) throw CorpusError("empty alias set in 'short_answers'");
      item.short_answers.push_back(std::move(aliases));
    }
  }
  if (item.id.empty()) throw CorpusError("empty id");
  return item;
}

json item_to_json(const QAItem& item) {
  json j;
  j["id"] = item.id;
  j["question"] = item.question;
  j["passages"] = item.passages;
  j["gold_answer"] = item.gold_answer ? json(*item.gold_answer) : json(nullptr);
  j["short_answers"] = item.short_answers;
  return j;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) f(line_no, line);
    pos = nl + 1;
  }
}

}  // namespace

std::vector<TokenSeq> SentenceSequence::prefix(std::size_t i) const {
  if (i > sentences.size()) throw std::out_of_range("prefix index beyond sentence count");
  return {sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(i)};
}

TokenSeq SentenceSequence::flatten() const { return gendie::flatten(sentences); }

TokenSeq flatten(std::span<const TokenSeq> sentences) {
  TokenSeq out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<std::string> split_sentences(std::string_view answer) {
  std::vector<std::string> out;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    auto piece = trim(answer.substr(start, end - start));
    if (!piece.empty()) out.emplace_back(piece);
    start = end;
  };
  for (std::size_t i = 0; i < answer.size(); ++i) {
    const char c = answer[i];
    if (c == '.' || c == '!' || c == '?') emit(i + 1);
  }
  emit(answer.size());
  return out;
}

std::vector<QAItem> parse_corpus(std::string_view jsonl, const std::string& source_name) {
  std::vector<QAItem> items;
  std::unordered_set<std::string> seen;
  for_each_line(jsonl, [&](std::size_t line_no, std::string_view line) {
    QAItem item;
    try {
      item = item_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw CorpusError(line_error(source_name, line_no, std::string("malformed JSON: ") + e.what()));
    } catch (const CorpusError& e) {
      throw CorpusError(line_error(source_name, line_no, e.what()));
    }
    if (!seen.insert(item.id).second) {
      throw CorpusError(line_error(source_name, line_no, "duplicate id '" + item.id + "'"));
    }
    items.push_back(std::move(item));
  });
  return items;
}

std::vector<QAItem> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_text_file(path), path.string());
}

std::string corpus_to_jsonl(std::span<const QAItem> items) {
  std::string out;
  for (const auto& item : items) {
    out += item_to_json(item).dump();
    out += '\n';
  }
  return out;
}

void save_corpus(std::span<const QAItem> items, const std::filesystem::path& path) {
  write_text_file(path, corpus_to_jsonl(items));
}

std::string instances_to_jsonl(std::span<const ContrastiveInstance> instances, const Vocabulary& vocab) {
  std::string out;
  for (const auto& inst : instances) {
    json j;
    j["item_id"] = inst.item_id;
    json prefix = json::array();
    for (const auto& s : inst.prefix) prefix.push_back(vocab.detokenize(s));
    j["prefix"] = std::move(prefix);
    j["target"] = vocab.detokenize(inst.target);
    j["negative"] = vocab.detokenize(inst.negative);
    j["with_passages"] = inst.with_passages;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_instances(std::span<const ContrastiveInstance> instances, const Vocabulary& vocab,
                    const std::filesystem::path& path) {
  write_text_file(path, instances_to_jsonl(instances, vocab));
}

std::vector<ContrastiveInstance> parse_instances(std::string_view jsonl, const Vocabulary& vocab,
                                                 const std::string& source_name) {
  std::vector<ContrastiveInstance> out;
  for_each_line(jsonl, [&](std::size_t line_no, std::string_view line) {
    try {
      json j = json::parse(line);
      ContrastiveInstance inst;
      inst.item_id = j.at("item_id").get<std::string>();
      for (const auto& s : string_list(j.at("prefix"), "prefix")) inst.prefix.push_back(vocab.tokenize(s));
      inst.target = vocab.tokenize(j.at("target").get<std::string>());
      inst.negative = vocab.tokenize(j.at("negative").get<std::string>());
      inst.with_passages = j.at("with_passages").get<bool>();
      if (inst.target.empty() || inst.negative.empty()) throw CorpusError("empty target or negative");
      out.push_back(std::move(inst));
    } catch (const std::exception& e) {
      throw CorpusError(line_error(source_name, line_no, e.what()));
    }
  });
  return out;
}

std::vector<ContrastiveInstance> load_instances(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_instances(read_text_file(path), vocab, path.string());
}

const QAItem& find_item(std::span<const QAItem> corpus, std::string_view id) {
  for (const auto& item : corpus) {
    if (item.id == id) return item;
  }
  throw CorpusError("unknown item id '" + std::string(id) + "'");
}

std::vector<TokenSeq> gold_sentences(const QAItem& item, const Vocabulary& vocab) {
  if (!item.gold_answer) throw CorpusError("item '" + item.id + "' has no gold answer");
  std::vector<TokenSeq> out;
  for (const auto& s : split_sentences(*item.gold_answer)) out.push_back(vocab.tokenize(s));
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw CorpusError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gendie
