#include "gendie/table_lm.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace gendie {

using nlohmann::json;

namespace {

class TableState final : public DecodeState {
 public:
  TableState(const TableLM& lm, bool with_passages, TokenSeq answer)
      : lm_(&lm), with_passages_(with_passages), answer_(std::move(answer)) {
    refresh();
  }

  std::span<const double> next_logprobs() const override { return *current_; }

  void push(TokenId token) override {
    answer_.push_back(token);
    refresh();
  }

  std::unique_ptr<DecodeState> clone() const override { return std::make_unique<TableState>(*this); }

 private:
  void refresh() { current_ = &lm_->lookup_logprobs(with_passages_, answer_); }

  const TableLM* lm_;
  bool with_passages_;
  TokenSeq answer_;
  const std::vector<double>* current_ = nullptr;
};

const char* mode_name(Conditioning m) {
  switch (m) {
    case Conditioning::any: return "any";
    case Conditioning::with_passages: return "with_passages";
    case Conditioning::closed_book: return "closed_book";
  }
  return "any";
}

Conditioning mode_from_name(const std::string& s) {
  if (s == "any") return Conditioning::any;
  if (s == "with_passages") return Conditioning::with_passages;
  if (s == "closed_book") return Conditioning::closed_book;
  throw LMError("unknown table mode '" + s + "'");
}

}  // namespace

TableLM::TableLM(Vocabulary vocab) : vocab_(std::move(vocab)) {
  const double u = -std::log(static_cast<double>(vocab_.size()));
  default_logprobs_.assign(vocab_.size(), u);
}

std::vector<double> TableLM::dense_from_probs(const std::vector<double>& probs) const {
  if (probs.size() != vocab_.size()) {
    throw LMError("table distribution has " + std::to_string(probs.size()) + " entries, vocabulary has " +
                  std::to_string(vocab_.size()));
  }
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw LMError("table probabilities must be finite and non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw LMError("table distribution sums to " + std::to_string(total) + ", expected 1");
  }
  std::vector<double> lp(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    lp[i] = probs[i] > 0.0 ? std::log(probs[i]) : -std::numeric_limits<double>::infinity();
  }
  return lp;
}

void TableLM::set(Conditioning mode, TokenSeq answer_context, std::vector<double> probs) {
  table_[{mode, std::move(answer_context)}] = dense_from_probs(probs);
}

void TableLM::set(Conditioning mode, const TokenSeq& answer_context,
                  const std::vector<std::pair<TokenId, double>>& probs) {
  std::vector<double> dense(vocab_.size(), 0.0);
  for (auto [t, p] : probs) dense.at(static_cast<std::size_t>(t)) += p;
  set(mode, answer_context, std::move(dense));
}

void TableLM::set_default(std::vector<double> probs) { default_logprobs_ = dense_from_probs(probs); }

const std::vector<double>& TableLM::lookup_logprobs(bool with_passages, const TokenSeq& answer_tokens) const {
  const Conditioning exact = with_passages ? Conditioning::with_passages : Conditioning::closed_book;
  // std::map lookup needs a key object; answer contexts are short.
  auto it = table_.find({exact, answer_tokens});
  if (it != table_.end()) return it->second;
  it = table_.find({Conditioning::any, answer_tokens});
  if (it != table_.end()) return it->second;
  return default_logprobs_;
}

std::unique_ptr<DecodeState> TableLM::start(const LMContext& ctx) const {
  return std::make_unique<TableState>(*this, ctx.has_passages(), flatten(ctx.prefix));
}

TableLM TableLM::from_json(const json& j) {
  std::vector<std::string> words;
  for (const auto& w : j.at("vocab")) words.push_back(w.get<std::string>());
  TableLM lm(Vocabulary::from_words(words));
  auto dense = [&](const json& dist) {
    std::vector<double> probs(lm.vocab_.size(), 0.0);
    for (auto it = dist.begin(); it != dist.end(); ++it) {
      probs.at(static_cast<std::size_t>(lm.vocab_.id(it.key()))) = it.value().get<double>();
    }
    return probs;
  };
  if (j.contains("default")) lm.set_default(dense(j.at("default")));
  if (j.contains("entries")) {
    for (const auto& e : j.at("entries")) {
      TokenSeq ctx;
      for (const auto& w : e.at("context")) ctx.push_back(lm.vocab_.id(w.get<std::string>()));
      const Conditioning mode = e.contains("mode") ? mode_from_name(e.at("mode").get<std::string>()) : Conditioning::any;
      lm.set(mode, std::move(ctx), dense(e.at("dist")));
    }
  }
  return lm;
}

TableLM TableLM::load(const std::filesystem::path& path) { return from_json(json::parse(read_text_file(path))); }

json TableLM::to_json() const {
  json j;
  json words = json::array();
  for (std::size_t i = 6; i < vocab_.size(); ++i) words.push_back(vocab_.words()[i]);
  j["vocab"] = std::move(words);
  auto sparse = [&](const std::vector<double>& lp) {
    json d = json::object();
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (std::isfinite(lp[i])) d[vocab_.words()[i]] = std::exp(lp[i]);
    }
    return d;
  };
  j["default"] = sparse(default_logprobs_);
  json entries = json::array();
  for (const auto& [key, lp] : table_) {
    json e;
    e["mode"] = mode_name(key.first);
    json ctx = json::array();
    for (TokenId t : key.second) ctx.push_back(vocab_.word(t));
    e["context"] = std::move(ctx);
    e["dist"] = sparse(lp);
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);
  return j;
}

}  // namespace gendie
