#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gendie/evolve.hpp"
#include "gendie/objective.hpp"
#include "gendie/rng.hpp"
#include "gendie/synthetic.hpp"
#include "gendie/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gendie;

namespace {

// Relative output paths land under $GENDIE_OUT when it is set.
fs::path out_path(const std::string& p) {
  const fs::path path(p);
  const char* root = std::getenv("GENDIE_OUT");
  if (path.is_absolute() || root == nullptr || *root == '\0') return path;
  return fs::path(root) / path;
}

void write_out(const std::string& dest, const std::string& content) {
  if (dest.empty() || dest == "-") {
    std::cout << content;
    return;
  }
  const fs::path p = out_path(dest);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text_file(p, content);
}

json read_json(const std::string& path) { return json::parse(read_text_file(path)); }

struct WorldOpts {
  int entities = WorldConfig{}.num_entities;
  std::uint64_t seed = WorldConfig{}.seed;

  void add(CLI::App* app) {
    app->add_option("--entities", entities, "people in the synthetic world");
    app->add_option("--world-seed", seed, "seed of the synthetic world");
  }
  SyntheticWorld make() const {
    WorldConfig wc;
    wc.num_entities = entities;
    wc.seed = seed;
    return SyntheticWorld::make(wc);
  }
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("gendie"));
  CLI::App app{"Context-faithful generation: data construction, training, decoding and evaluation"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only warnings and errors");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic QA corpus");
  WorldOpts synth_world;
  synth_world.add(synth);
  CorpusConfig cc;
  std::string synth_out;
  synth->add_option("--size", cc.size, "number of items");
  synth->add_option("--conflict", cc.conflict_prob, "chance a passage contradicts memory");
  synth->add_option("--two-aspect", cc.two_aspect_prob, "chance of a two-attribute question");
  synth->add_option("--seed", cc.seed, "corpus seed");
  synth->add_option("-o,--out", synth_out, "corpus JSONL (stdout when omitted)");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the base model on the synthetic world");
  WorldOpts pre_world;
  pre_world.add(pre);
  PretrainConfig pc;
  std::string pre_config, pre_out, pre_log;
  pre->add_option("--config", pre_config, "JSON pretraining config");
  pre->add_option("--steps", pc.steps, "optimizer steps");
  pre->add_option("--lr", pc.learning_rate, "learning rate");
  pre->add_option("--seed", pc.seed, "data and initialization seed");
  pre->add_option("-o,--out", pre_out, "checkpoint path")->required();
  pre->add_option("--log", pre_log, "per-step loss JSONL");

  // prestage
  auto* ps = app.add_subcommand("prestage", "build the pre-stage contrastive dataset");
  std::string ps_model, ps_corpus, ps_out, ps_stats;
  PrestageConfig psc;
  bool ps_no_filter = false;
  ps->add_option("--model", ps_model, "checkpoint")->required();
  ps->add_option("--corpus", ps_corpus, "corpus JSONL")->required();
  ps->add_option("-o,--out", ps_out, "instance JSONL")->required();
  ps->add_option("--stats", ps_stats, "stats JSON");
  ps->add_option("--candidates", psc.num_candidates, "closed-book samples per gold sentence");
  ps->add_option("--max-kept", psc.max_kept, "negatives kept per gold sentence");
  ps->add_flag("--no-filter", ps_no_filter, "keep random candidates instead of ratio-filtered ones");
  ps->add_flag("--answer-level", psc.answer_level, "treat whole answers as single units");
  ps->add_option("--seed", seed, "sampling seed");

  // treesample
  auto* ts = app.add_subcommand("treesample", "tree-sample answers and extract sibling pairs");
  std::string ts_model, ts_corpus, ts_out, ts_dump;
  TreeConfig tc;
  ts->add_option("--model", ts_model, "checkpoint")->required();
  ts->add_option("--corpus", ts_corpus, "corpus JSONL")->required();
  ts->add_option("-o,--out", ts_out, "instance JSONL")->required();
  ts->add_option("--dump-trees", ts_dump, "directory for per-item tree JSON");
  ts->add_option("--branching", tc.branching, "children per node");
  ts->add_option("--max-depth", tc.max_depth, "maximum path length in sentences");
  ts->add_option("--node-budget", tc.node_budget, "maximum sampled nodes per tree");
  ts->add_option("--seed", seed, "sampling seed");

  // train
  auto* tr = app.add_subcommand("train", "train a checkpoint on contrastive instances");
  std::string tr_model, tr_corpus, tr_inst, tr_out, tr_log;
  double tr_lambda = kDefaultLambda;
  int tr_epochs = 1;
  EpochConfig ec;
  ec.learning_rate = IterationPlan{}.learning_rate;
  tr->add_option("--model", tr_model, "input checkpoint")->required();
  tr->add_option("--corpus", tr_corpus, "corpus JSONL the instances refer to")->required();
  tr->add_option("--instances", tr_inst, "instance JSONL")->required();
  tr->add_option("-o,--out", tr_out, "output checkpoint")->required();
  tr->add_option("--log", tr_log, "training log JSONL");
  tr->add_option("--lambda", tr_lambda, "weight of the discrimination term");
  tr->add_option("--lr", ec.learning_rate, "learning rate");
  tr->add_option("--epochs", tr_epochs, "passes over the data");
  tr->add_option("--batch-size", ec.batch_size, "instances per step");
  tr->add_option("--grad-clip", ec.grad_clip, "gradient norm cap (0 disables)");
  tr->add_option("--seed", seed, "shuffle seed");

  // generate
  auto* gen = app.add_subcommand("generate", "decode answers for a corpus");
  std::string gen_model, gen_corpus, gen_out, gen_mode = "hierarchical", gen_decode = "beam";
  InferenceConfig ic;
  gen->add_option("--model", gen_model, "checkpoint")->required();
  gen->add_option("--corpus", gen_corpus, "corpus JSONL")->required();
  gen->add_option("--mode", gen_mode, "decoder")->check(CLI::IsMember({"greedy", "beam", "hierarchical"}));
  gen->add_option("--beams", ic.num_beams, "N: sentence-level beams (token beams in beam mode)");
  gen->add_option("--width", ic.beam_width, "M: candidate sentences per beam");
  gen->add_option("--max-steps", ic.max_steps, "maximum sentences");
  gen->add_option("--max-tokens", ic.max_tokens, "maximum tokens per sentence");
  gen->add_option("--token-decode", gen_decode, "candidate sentence decoder")
      ->check(CLI::IsMember({"greedy", "beam", "sample"}));
  gen->add_option("--seed", seed, "seed for sampled candidates");
  gen->add_option("-o,--out", gen_out, "answers JSONL (stdout when omitted)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score answers against a corpus");
  std::string ev_answers, ev_corpus, ev_judge = "proxy", ev_cmd, ev_out, ev_csv;
  bool ev_allow_empty = false;
  ev->add_option("--answers", ev_answers, "answers JSONL")->required();
  ev->add_option("--corpus", ev_corpus, "corpus JSONL")->required();
  ev->add_option("--judge", ev_judge, "faithfulness judge")->check(CLI::IsMember({"proxy", "external-command"}));
  ev->add_option("--judge-command", ev_cmd, "shell command speaking the line protocol");
  ev->add_option("-o,--out", ev_out, "report JSON (stdout when omitted)");
  ev->add_option("--csv", ev_csv, "per-item CSV");
  ev->add_flag("--allow-empty", ev_allow_empty, "accept an empty answer file");
  ev->add_option("--seed", seed, "unused; accepted for uniformity");

  // evolve
  auto* evo = app.add_subcommand("evolve", "run the full self-evolution loop");
  std::string evo_config, evo_model, evo_corpus, evo_eval, evo_out = "run";
  bool evo_answer_level = false;
  WorldOpts evo_world;
  evo_world.add(evo);
  evo->add_option("--config", evo_config, "JSON iteration plan");
  evo->add_option("--model", evo_model, "base checkpoint (pretrained on the fly when omitted)");
  evo->add_option("--corpus", evo_corpus, "training corpus (synthetic 50 items when omitted)");
  evo->add_option("--eval-corpus", evo_eval, "evaluation corpus (a fresh synthetic split when omitted)");
  evo->add_option("-o,--out", evo_out, "run directory");
  evo->add_flag("--answer-level", evo_answer_level, "answer-level ablation");
  evo->add_option("--seed", seed, "plan seed");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*synth) {
      const auto items = make_synthetic_corpus(synth_world.make(), cc);
      write_out(synth_out, corpus_to_jsonl(items));
    } else if (*pre) {
      if (!pre_config.empty()) {
        PretrainConfig from = PretrainConfig::from_json(read_json(pre_config));
        if (pre->count("--steps") == 0) pc.steps = from.steps;
        if (pre->count("--lr") == 0) pc.learning_rate = from.learning_rate;
        if (pre->count("--seed") == 0) pc.seed = from.seed;
        from.steps = pc.steps;
        from.learning_rate = pc.learning_rate;
        from.seed = pc.seed;
        pc = from;
      }
      std::vector<double> losses;
      const ToyLM model = pretrain_base_model(pre_world.make(), pc, &losses);
      const fs::path p = out_path(pre_out);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      model.save(p);
      if (!pre_log.empty()) {
        std::string lines;
        for (std::size_t i = 0; i < losses.size(); ++i) lines += json{{"step", i + 1}, {"lm", losses[i]}}.dump() + "\n";
        write_out(pre_log, lines);
      }
      spdlog::info("saved {} ({} parameters, final loss {:.4f})", p.string(), model.num_parameters(),
                   losses.empty() ? 0.0 : losses.back());
    } else if (*ps) {
      const ToyLM model = ToyLM::load(ps_model);
      const auto corpus = load_corpus(ps_corpus);
      psc.filter = !ps_no_filter;
      psc.seed = seed;
      const PrestageResult res = build_prestage_dataset(model, corpus, psc);
      write_out(ps_out, instances_to_jsonl(res.instances, model.vocab()));
      if (!ps_stats.empty()) write_out(ps_stats, res.stats.to_json().dump(2) + "\n");
      spdlog::info("prestage: {}", res.stats.to_json().dump());
    } else if (*ts) {
      const ToyLM model = ToyLM::load(ts_model);
      const auto corpus = load_corpus(ts_corpus);
      std::vector<ContrastiveInstance> all;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const SampleTree tree = grow_tree(model, corpus[i], tc, derive_seed(seed, {i}));
        std::optional<PathCandidate> best;
        if (tree.nodes.size() > 1) {
          best = select_best_path(tree, corpus[i], model.vocab());
          for (auto& inst : extract_pairs(tree, *best, corpus[i])) all.push_back(std::move(inst));
        }
        if (!ts_dump.empty()) {
          write_out((fs::path(ts_dump) / (corpus[i].id + ".json")).string(),
                    tree_to_json(tree, model.vocab(), best).dump(2) + "\n");
        }
      }
      write_out(ts_out, instances_to_jsonl(all, model.vocab()));
      spdlog::info("treesample: {} pairs from {} items", all.size(), corpus.size());
    } else if (*tr) {
      ToyLM model = ToyLM::load(tr_model);
      const auto corpus = load_corpus(tr_corpus);
      const auto examples = resolve_instances(load_instances(tr_inst, model.vocab()), corpus, model.vocab());
      AdamW opt;
      std::string lines;
      for (int ep = 0; ep < tr_epochs; ++ep) {
        for (const auto& s : train_epoch(model, opt, examples, CombinedObjective{tr_lambda, 1.0}, ec,
                                         derive_seed(seed, {static_cast<std::uint64_t>(ep)}))) {
          lines += json{{"step", s.step}, {"lm", s.loss.lm_term}, {"disc", s.loss.disc_term}, {"total", s.loss.total}}
                       .dump() +
                   "\n";
        }
      }
      const fs::path p = out_path(tr_out);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      model.save(p);
      if (!tr_log.empty()) write_out(tr_log, lines);
    } else if (*gen) {
      const ToyLM model = ToyLM::load(gen_model);
      const auto corpus = load_corpus(gen_corpus);
      ic.token_decode.kind = gen_decode == "greedy"   ? TokenDecodeKind::Greedy
                             : gen_decode == "sample" ? TokenDecodeKind::Sample
                                                      : TokenDecodeKind::Beam;
      ic.token_decode.seed = seed;
      write_out(gen_out, answers_to_jsonl(generate_answers(model, corpus, ic, gen_mode)));
    } else if (*ev) {
      const auto answers = load_answers(ev_answers);
      const auto corpus = load_corpus(ev_corpus);
      std::unique_ptr<FaithfulnessJudge> judge;
      if (ev_judge == "external-command") {
        if (ev_cmd.empty()) throw EvalError("--judge external-command needs --judge-command");
        judge = std::make_unique<ExternalCommandJudge>(ev_cmd);
      } else {
        judge = std::make_unique<LexicalSupportJudge>();
      }
      const EvalReport rep = evaluate(answers, corpus, *judge, ev_allow_empty);
      write_out(ev_out, rep.to_json().dump(2) + "\n");
      if (!ev_csv.empty()) write_out(ev_csv, rep.to_csv());
    } else if (*evo) {
      IterationPlan plan = evo_config.empty() ? IterationPlan{} : IterationPlan::from_json(read_json(evo_config));
      if (evo->count("--seed")) plan.seed = seed;
      if (evo_answer_level) plan = answer_level_mode(plan);
      const SyntheticWorld world = evo_world.make();
      const auto corpus = evo_corpus.empty() ? make_synthetic_corpus(world, CorpusConfig{}) : load_corpus(evo_corpus);
      CorpusConfig eval_cc;
      eval_cc.seed = 99;
      const auto eval = evo_eval.empty() ? make_synthetic_corpus(world, eval_cc) : load_corpus(evo_eval);
      const fs::path dir = out_path(evo_out);
      fs::create_directories(dir);
      ToyLM base = [&] {
        if (!evo_model.empty()) return ToyLM::load(evo_model);
        spdlog::info("pretraining a base model");
        ToyLM m = pretrain_base_model(world, PretrainConfig{});
        m.save(dir / "base.json");
        return m;
      }();
      if (evo_corpus.empty()) save_corpus(corpus, dir / "corpus.jsonl");
      if (evo_eval.empty()) save_corpus(eval, dir / "eval_corpus.jsonl");
      const RunManifest m = run_evolution(plan, base, corpus, eval, dir);
      for (const auto& r : m.iterations) {
        std::cout << "iteration " << r.iteration << ": pairs=" << r.pairs
                  << " greedy_faithfulness=" << r.greedy.faithfulness_proxy;
        if (r.hierarchical) std::cout << " hierarchical_faithfulness=" << r.hierarchical->faithfulness_proxy;
        std::cout << " greedy_em=" << r.greedy.em_recall << "\n";
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
