#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gendie/corpus.hpp"
#include "gendie/evolve.hpp"
#include "gendie/harness.hpp"
#include "gendie/inference.hpp"
#include "gendie/prestage.hpp"
#include "gendie/rng.hpp"
#include "gendie/scoring.hpp"
#include "gendie/synthetic.hpp"
#include "gendie/toy_lm.hpp"
#include "gendie/treesample.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace gendie {
namespace {

json parse_or_empty(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

TokenDecodeKind decode_kind(const std::string& name) {
  if (name == "greedy") return TokenDecodeKind::Greedy;
  if (name == "sample") return TokenDecodeKind::Sample;
  if (name == "beam") return TokenDecodeKind::Beam;
  throw std::invalid_argument("unknown token decode '" + name + "'");
}

std::string synth_corpus(const std::string& world_json, const std::string& corpus_json) {
  const auto world = SyntheticWorld::make(WorldConfig::from_json(parse_or_empty(world_json)));
  return corpus_to_jsonl(make_synthetic_corpus(world, CorpusConfig::from_json(parse_or_empty(corpus_json))));
}

py::tuple pretrain(const std::string& world_json, const std::string& pretrain_json) {
  const auto world = SyntheticWorld::make(WorldConfig::from_json(parse_or_empty(world_json)));
  std::vector<double> losses;
  ToyLM model = [&] {
    py::gil_scoped_release release;
    return pretrain_base_model(world, PretrainConfig::from_json(parse_or_empty(pretrain_json)), &losses);
  }();
  return py::make_tuple(std::move(model), std::move(losses));
}

std::string generate(const ToyLM& model, const std::string& corpus_jsonl, const std::string& mode,
                     const std::string& token_decode, int num_beams, int beam_width, int max_steps, int max_tokens,
                     std::uint64_t seed) {
  const auto corpus = parse_corpus(corpus_jsonl);
  InferenceConfig cfg;
  cfg.num_beams = num_beams;
  cfg.beam_width = beam_width;
  cfg.max_steps = max_steps;
  cfg.max_tokens = max_tokens;
  cfg.token_decode.kind = decode_kind(token_decode);
  cfg.token_decode.seed = seed;
  py::gil_scoped_release release;
  return answers_to_jsonl(generate_answers(model, corpus, cfg, mode));
}

std::string evaluate_answers(const std::string& answers_jsonl, const std::string& corpus_jsonl, bool allow_empty) {
  const auto answers = parse_answers(answers_jsonl);
  const auto corpus = parse_corpus(corpus_jsonl);
  LexicalSupportJudge judge;
  return evaluate(answers, corpus, judge, allow_empty).to_json().dump();
}

py::tuple prestage(const ToyLM& model, const std::string& corpus_jsonl, std::uint64_t seed, bool filter,
                   bool answer_level) {
  const auto corpus = parse_corpus(corpus_jsonl);
  PrestageConfig cfg;
  cfg.seed = seed;
  cfg.filter = filter;
  cfg.answer_level = answer_level;
  PrestageResult res;
  {
    py::gil_scoped_release release;
    res = build_prestage_dataset(model, corpus, cfg);
  }
  return py::make_tuple(instances_to_jsonl(res.instances, model.vocab()), res.stats.to_json().dump());
}

std::string treesample(const ToyLM& model, const std::string& corpus_jsonl, std::uint64_t seed, int branching,
                       int max_depth, int node_budget) {
  const auto corpus = parse_corpus(corpus_jsonl);
  TreeConfig cfg;
  cfg.branching = branching;
  cfg.max_depth = max_depth;
  cfg.node_budget = node_budget;
  py::gil_scoped_release release;
  std::vector<ContrastiveInstance> all;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SampleTree tree = grow_tree(model, corpus[i], cfg, derive_seed(seed, {i}));
    if (tree.nodes.size() <= 1) continue;
    const PathCandidate best = select_best_path(tree, corpus[i], model.vocab());
    for (auto& inst : extract_pairs(tree, best, corpus[i])) all.push_back(std::move(inst));
  }
  return instances_to_jsonl(all, model.vocab());
}

double score_sentence(const ToyLM& model, const std::string& item_json, const std::vector<std::string>& prefix,
                      const std::string& sentence) {
  const QAItem item = parse_corpus(item_json).at(0);
  std::vector<TokenSeq> pre;
  for (const auto& s : prefix) pre.push_back(model.vocab().tokenize(s));
  const LMContext ctx = make_context(item, model.vocab(), std::move(pre), true);
  return faithfulness_score(model, ctx, model.vocab().tokenize(sentence)).value;
}

std::string evolve(const ToyLM& base, const std::string& plan_json, const std::string& corpus_jsonl,
                   const std::string& eval_jsonl, const std::filesystem::path& out_dir) {
  const IterationPlan plan = IterationPlan::from_json(parse_or_empty(plan_json));
  const auto corpus = parse_corpus(corpus_jsonl);
  const auto eval = parse_corpus(eval_jsonl);
  std::filesystem::create_directories(out_dir);
  py::gil_scoped_release release;
  return run_evolution(plan, base, corpus, eval, out_dir).to_json().dump();
}

}  // namespace
}  // namespace gendie

PYBIND11_MODULE(_gendie, m) {
  using namespace gendie;
  m.doc() = "Faithfulness-guided self-evolution core";

  py::class_<ToyLM>(m, "ToyLM")
      .def_static("load", &ToyLM::load, py::arg("path"))
      .def("save", &ToyLM::save, py::arg("path"))
      .def_property_readonly("num_parameters", &ToyLM::num_parameters)
      .def_property_readonly("parameter_hash", &ToyLM::parameter_hash)
      .def_property_readonly("vocab_size", [](const ToyLM& lm) { return lm.vocab().size(); })
      .def("tokenize", [](const ToyLM& lm, const std::string& text) { return lm.vocab().tokenize(text); })
      .def("detokenize",
           [](const ToyLM& lm, const std::vector<TokenId>& ids) { return lm.vocab().detokenize(ids); });

  m.def("synth_corpus", &synth_corpus, py::arg("world_json") = "", py::arg("corpus_json") = "");
  m.def("pretrain", &pretrain, py::arg("world_json") = "", py::arg("pretrain_json") = "");
  m.def("generate", &generate, py::arg("model"), py::arg("corpus_jsonl"), py::arg("mode") = "hierarchical",
        py::arg("token_decode") = "beam", py::arg("num_beams") = 3, py::arg("beam_width") = 3,
        py::arg("max_steps") = 6, py::arg("max_tokens") = 64, py::arg("seed") = 0);
  m.def("evaluate", &evaluate_answers, py::arg("answers_jsonl"), py::arg("corpus_jsonl"),
        py::arg("allow_empty") = false);
  m.def("prestage", &prestage, py::arg("model"), py::arg("corpus_jsonl"), py::arg("seed") = 0,
        py::arg("filter") = true, py::arg("answer_level") = false);
  m.def("treesample", &treesample, py::arg("model"), py::arg("corpus_jsonl"), py::arg("seed") = 0,
        py::arg("branching") = 3, py::arg("max_depth") = 6, py::arg("node_budget") = 120);
  m.def("score_sentence", &score_sentence, py::arg("model"), py::arg("item_json"), py::arg("prefix"),
        py::arg("sentence"));
  m.def("em_recall", [](const std::string& answer, const std::vector<std::vector<std::string>>& sets) {
    return em_recall(answer, sets);
  });
  m.def("evolve", &evolve, py::arg("base"), py::arg("plan_json"), py::arg("corpus_jsonl"), py::arg("eval_jsonl"),
        py::arg("out_dir"));

  py::register_exception<VocabError>(m, "VocabError", PyExc_ValueError);
  py::register_exception<CorpusError>(m, "CorpusError", PyExc_ValueError);
  py::register_exception<EvalError>(m, "EvalError", PyExc_ValueError);
  py::register_exception<EvolveError>(m, "EvolveError", PyExc_RuntimeError);
}
