#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gendie/corpus.hpp"
#include "gendie/toy_lm.hpp"
#include "gendie/training.hpp"

namespace gendie {

// A small closed world of people with three attributes each. Every person has
// a "memory" value per attribute (what a closed-book model learns) and a
// gossip propensity (how often it rambles with an unsupported sentence
// before stating a fact).
enum class Relation { Born = 0, Job = 1, Instrument = 2 };
inline constexpr int kNumRelations = 3;

struct WorldConfig {
  int num_entities = 24;
  double gossip_min = 0.4;
  double gossip_max = 0.97;
  std::uint64_t seed = 7;

  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& j);
};

struct SyntheticWorld {
  WorldConfig config;
  std::vector<std::string> entities;
  std::array<std::vector<std::string>, kNumRelations> values;
  std::vector<std::array<int, kNumRelations>> memory;  // value index per entity
  std::vector<double> gossip;                          // per-entity propensity
  std::vector<std::string> adjectives;

  static SyntheticWorld make(const WorldConfig& cfg);
  Vocabulary vocabulary() const;

  std::string fact_sentence(int entity, Relation r, int value) const;
  std::string gossip_sentence(int entity, int adj_a, int adj_b) const;
  std::string question(int entity, const std::vector<Relation>& aspects) const;
};

struct CorpusConfig {
  int size = 50;
  // Chance that a passage contradicts the memory value.
  double conflict_prob = 0.5;
  // Chance an item asks about two attributes instead of one.
  double two_aspect_prob = 0.5;
  std::uint64_t seed = 11;

  nlohmann::json to_json() const;
  static CorpusConfig from_json(const nlohmann::json& j);
};

// Items whose passages state each attribute of one person (shuffled) and whose
// gold answer repeats the asked facts verbatim from the passages.
std::vector<QAItem> make_synthetic_corpus(const SyntheticWorld& world, const CorpusConfig& cfg);

struct PretrainConfig {
  int steps = 1500;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double grad_clip = 1.0;
  // Share of open-book examples (the rest are closed-book).
  double open_book_prob = 0.7;
  // Open-book facts copied from the passage; otherwise memory is recited.
  double copy_prob = 0.6;
  double conflict_prob = 0.5;
  double two_aspect_prob = 0.5;
  std::uint64_t seed = 3;
  ToyLMConfig model;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

// One base-model training example drawn from the world: conditioning plus an
// answer mixing copied facts, recited memory and gossip.
LMExample sample_pretrain_example(const SyntheticWorld& world, const Vocabulary& vocab, const PretrainConfig& cfg,
                                  std::uint64_t seed);

// Trains the base model from scratch; `log` (optional) receives step losses.
ToyLM pretrain_base_model(const SyntheticWorld& world, const PretrainConfig& cfg,
                          std::vector<double>* log = nullptr);

}  // namespace gendie
