#include "gendie/synthetic.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "gendie/rng.hpp"

namespace gendie {

using nlohmann::json;

namespace {

const std::vector<std::string> kNames = {"alba",  "bruno", "cora",  "dario", "elsa",  "felix", "greta", "hugo",
                                         "ines",  "jonas", "kira",  "luca",  "mira",  "nils",  "olga",  "pavel",
                                         "quinn", "rosa",  "sven",  "tara",  "umar",  "vera",  "wim",   "yara",
                                         "zeno",  "anja",  "boris", "clio",  "dina",  "emil",  "fiona", "gino"};
const std::vector<std::string> kCities = {"paris", "oslo", "lima", "cairo", "delhi", "quito", "rome", "seoul"};
const std::vector<std::string> kJobs = {"baker", "pilot", "farmer", "nurse", "tailor", "sailor", "lawyer", "painter"};
const std::vector<std::string> kInstruments = {"piano", "violin", "drums",  "flute",
                                               "harp",  "cello",  "guitar", "trumpet"};
const std::vector<std::string> kAdjectives = {"tall", "quiet", "funny", "brave", "shy",
                                              "kind", "loud",  "calm",  "proud", "witty"};
const std::array<std::string, kNumRelations> kAspectWords = {"birthplace", "job", "instrument"};

struct ItemDraw {
  int entity = 0;
  std::vector<Relation> aspects;
  std::array<int, kNumRelations> passage_values{};
  std::array<int, kNumRelations> passage_order{0, 1, 2};
};

ItemDraw draw_item(const SyntheticWorld& w, double conflict_prob, double two_aspect_prob, Rng& rng) {
  ItemDraw d;
  d.entity = static_cast<int>(rng.below(w.entities.size()));
  std::vector<int> rels{0, 1, 2};
  rng.shuffle(rels);
  const int n = rng.bernoulli(two_aspect_prob) ? 2 : 1;
  for (int i = 0; i < n; ++i) d.aspects.push_back(static_cast<Relation>(rels[static_cast<std::size_t>(i)]));
  for (int r = 0; r < kNumRelations; ++r) {
    const int mem = w.memory[static_cast<std::size_t>(d.entity)][static_cast<std::size_t>(r)];
    int v = mem;
    if (rng.bernoulli(conflict_prob)) {
      const auto pool = w.values[static_cast<std::size_t>(r)].size();
      v = static_cast<int>((static_cast<std::size_t>(mem) + 1 + rng.below(pool - 1)) % pool);
    }
    d.passage_values[static_cast<std::size_t>(r)] = v;
  }
  rng.shuffle(d.passage_order);
  return d;
}

std::vector<std::string> passages_of(const SyntheticWorld& w, const ItemDraw& d) {
  std::vector<std::string> out;
  for (int r : d.passage_order) {
    out.push_back(w.fact_sentence(d.entity, static_cast<Relation>(r), d.passage_values[static_cast<std::size_t>(r)]));
  }
  return out;
}

}  // namespace

json WorldConfig::to_json() const {
  return {{"num_entities", num_entities}, {"gossip_min", gossip_min}, {"gossip_max", gossip_max}, {"seed", seed}};
}

WorldConfig WorldConfig::from_json(const json& j) {
  WorldConfig c;
  c.num_entities = j.value("num_entities", c.num_entities);
  c.gossip_min = j.value("gossip_min", c.gossip_min);
  c.gossip_max = j.value("gossip_max", c.gossip_max);
  c.seed = j.value("seed", c.seed);
  return c;
}

SyntheticWorld SyntheticWorld::make(const WorldConfig& cfg) {
  if (cfg.num_entities < 1 || cfg.num_entities > static_cast<int>(kNames.size())) {
    throw CorpusError("num_entities must be in [1, " + std::to_string(kNames.size()) + "]");
  }
  if (!(cfg.gossip_min >= 0.0 && cfg.gossip_min <= cfg.gossip_max && cfg.gossip_max < 1.0)) {
    throw CorpusError("gossip propensity range must satisfy 0 <= min <= max < 1");
  }
  SyntheticWorld w;
  w.config = cfg;
  w.entities.assign(kNames.begin(), kNames.begin() + cfg.num_entities);
  w.values = {kCities, kJobs, kInstruments};
  w.adjectives = kAdjectives;
  Rng rng(derive_seed(cfg.seed, {0x57041Du}));
  for (int e = 0; e < cfg.num_entities; ++e) {
    std::array<int, kNumRelations> m{};
    for (int r = 0; r < kNumRelations; ++r) {
      m[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(w.values[static_cast<std::size_t>(r)].size()));
    }
    w.memory.push_back(m);
    w.gossip.push_back(cfg.gossip_min + (cfg.gossip_max - cfg.gossip_min) * rng.uniform());
  }
  return w;
}

Vocabulary SyntheticWorld::vocabulary() const {
  std::vector<std::string> words = {"was", "born", "in", "works", "as", "a", "plays", "the", "is", "and",
                                    "what", "about", ".", "?"};
  for (const auto& a : kAspectWords) words.push_back(a);
  words.insert(words.end(), entities.begin(), entities.end());
  for (const auto& pool : values) words.insert(words.end(), pool.begin(), pool.end());
  words.insert(words.end(), adjectives.begin(), adjectives.end());
  return Vocabulary::from_words(words);
}

std::string SyntheticWorld::fact_sentence(int entity, Relation r, int value) const {
  const std::string& e = entities.at(static_cast<std::size_t>(entity));
  const std::string& v = values[static_cast<std::size_t>(r)].at(static_cast<std::size_t>(value));
  switch (r) {
    case Relation::Born:
      return e + " was born in " + v + ".";
    case Relation::Job:
      return e + " works as a " + v + ".";
    case Relation::Instrument:
      return e + " plays the " + v + ".";
  }
  return {};
}

std::string SyntheticWorld::gossip_sentence(int entity, int adj_a, int adj_b) const {
  return entities.at(static_cast<std::size_t>(entity)) + " is " + adjectives.at(static_cast<std::size_t>(adj_a)) +
         " and " + adjectives.at(static_cast<std::size_t>(adj_b)) + ".";
}

std::string SyntheticWorld::question(int entity, const std::vector<Relation>& aspects) const {
  std::string q = "what about " + entities.at(static_cast<std::size_t>(entity));
  for (std::size_t i = 0; i < aspects.size(); ++i) {
    q += (i == 0 ? " " : " and ") + kAspectWords[static_cast<std::size_t>(aspects[i])];
  }
  return q + "?";
}

json CorpusConfig::to_json() const {
  return {{"size", size}, {"conflict_prob", conflict_prob}, {"two_aspect_prob", two_aspect_prob}, {"seed", seed}};
}

CorpusConfig CorpusConfig::from_json(const json& j) {
  CorpusConfig c;
  c.size = j.value("size", c.size);
  c.conflict_prob = j.value("conflict_prob", c.conflict_prob);
  c.two_aspect_prob = j.value("two_aspect_prob", c.two_aspect_prob);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<QAItem> make_synthetic_corpus(const SyntheticWorld& world, const CorpusConfig& cfg) {
  if (cfg.size < 1) throw CorpusError("corpus size must be positive");
  std::vector<QAItem> out;
  for (int i = 0; i < cfg.size; ++i) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)}));
    const ItemDraw d = draw_item(world, cfg.conflict_prob, cfg.two_aspect_prob, rng);
    QAItem item;
    item.id = "syn-" + std::to_string(cfg.seed) + "-" + std::to_string(i);
    item.question = world.question(d.entity, d.aspects);
    item.passages = passages_of(world, d);
    std::string gold;
    for (Relation r : d.aspects) {
      const int v = d.passage_values[static_cast<std::size_t>(r)];
      gold += (gold.empty() ? "" : " ") + world.fact_sentence(d.entity, r, v);
      item.short_answers.push_back({world.values[static_cast<std::size_t>(r)][static_cast<std::size_t>(v)]});
    }
    item.gold_answer = gold;
    out.push_back(std::move(item));
  }
  return out;
}

json PretrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"grad_clip", grad_clip},
          {"open_book_prob", open_book_prob},
          {"copy_prob", copy_prob},
          {"conflict_prob", conflict_prob},
          {"two_aspect_prob", two_aspect_prob},
          {"seed", seed},
          {"model", model.to_json()}};
}

PretrainConfig PretrainConfig::from_json(const json& j) {
  PretrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.open_book_prob = j.value("open_book_prob", c.open_book_prob);
  c.copy_prob = j.value("copy_prob", c.copy_prob);
  c.conflict_prob = j.value("conflict_prob", c.conflict_prob);
  c.two_aspect_prob = j.value("two_aspect_prob", c.two_aspect_prob);
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = ToyLMConfig::from_json(j["model"]);
  return c;
}

LMExample sample_pretrain_example(const SyntheticWorld& world, const Vocabulary& vocab, const PretrainConfig& cfg,
                                  std::uint64_t seed) {
  Rng rng(seed);
  const ItemDraw d = draw_item(world, cfg.conflict_prob, cfg.two_aspect_prob, rng);
  const bool open_book = rng.bernoulli(cfg.open_book_prob);
  QAItem item;
  item.question = world.question(d.entity, d.aspects);
  item.passages = passages_of(world, d);

  std::string answer;
  auto add = [&](const std::string& s) { answer += (answer.empty() ? "" : " ") + s; };
  for (Relation r : d.aspects) {
    if (rng.bernoulli(world.gossip[static_cast<std::size_t>(d.entity)])) {
      const int a = static_cast<int>(rng.below(world.adjectives.size()));
      const int b = static_cast<int>(rng.below(world.adjectives.size()));
      add(world.gossip_sentence(d.entity, a, b));
    }
    const int mem = world.memory[static_cast<std::size_t>(d.entity)][static_cast<std::size_t>(r)];
    const bool copy = open_book && rng.bernoulli(cfg.copy_prob);
    add(world.fact_sentence(d.entity, r, copy ? d.passage_values[static_cast<std::size_t>(r)] : mem));
  }
  LMExample ex;
  ex.context = serialize_context(make_context(item, vocab, {}, open_book), vocab);
  ex.target = vocab.tokenize(answer);
  ex.target.push_back(vocab.eos());
  return ex;
}

ToyLM pretrain_base_model(const SyntheticWorld& world, const PretrainConfig& cfg, std::vector<double>* log) {
  const Vocabulary vocab = world.vocabulary();
  ToyLM model(vocab, cfg.model);
  AdamW opt;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<LMExample> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      batch.push_back(sample_pretrain_example(
          world, vocab, cfg, derive_seed(cfg.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)})));
    }
    const double loss = lm_train_step(model, opt, batch, cfg.learning_rate, cfg.grad_clip);
    if (log) log->push_back(loss);
  }
  return model;
}

}  // namespace gendie
