#include "gendie/evolve.hpp"

#include <spdlog/spdlog.h>

#include "gendie/objective.hpp"
#include "gendie/rng.hpp"
#include "gendie/training.hpp"

namespace gendie {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json sampling_to_json(const SamplingConfig& s) {
  return {{"top_p", s.top_p},
          {"temperature", s.temperature},
          {"max_tokens", s.max_tokens},
          {"stop_at_sentence_end", s.stop_at_sentence_end}};
}

SamplingConfig sampling_from_json(const json& j, SamplingConfig s) {
  s.top_p = j.value("top_p", s.top_p);
  s.temperature = j.value("temperature", s.temperature);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
  s.stop_at_sentence_end = j.value("stop_at_sentence_end", s.stop_at_sentence_end);
  return s;
}

const char* decode_name(TokenDecodeKind k) {
  switch (k) {
    case TokenDecodeKind::Greedy:
      return "greedy";
    case TokenDecodeKind::Beam:
      return "beam";
    case TokenDecodeKind::Sample:
      return "sample";
  }
  return "beam";
}

TokenDecodeKind decode_kind(const std::string& s) {
  if (s == "greedy") return TokenDecodeKind::Greedy;
  if (s == "beam") return TokenDecodeKind::Beam;
  if (s == "sample") return TokenDecodeKind::Sample;
  throw EvolveError("unknown token decode '" + s + "'");
}


std::string rel(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

}  // namespace

std::string content_hash(std::string_view bytes) { return hex64(fnv1a(bytes.data(), bytes.size())); }

json IterationPlan::to_json() const {
  const auto& td = inference.token_decode;
  return {{"num_iterations", num_iterations},
          {"epochs_per_iteration", epochs_per_iteration},
          {"objective_lambda", objective_lambda},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"grad_clip", grad_clip},
          {"continue_from_previous", continue_from_previous},
          {"answer_level", answer_level},
          {"eval_hierarchical", eval_hierarchical},
          {"seed", seed},
          {"tree",
           {{"branching", tree.branching},
            {"max_depth", tree.max_depth},
            {"node_budget", tree.node_budget},
            {"resample_attempts", tree.resample_attempts},
            {"sampling", sampling_to_json(tree.sampling)}}},
          {"inference",
           {{"num_beams", inference.num_beams},
            {"beam_width", inference.beam_width},
            {"max_steps", inference.max_steps},
            {"max_tokens", inference.max_tokens},
            {"stop_at_sentence_end", inference.stop_at_sentence_end},
            {"token_decode", decode_name(td.kind)},
            {"expansion_budget", td.expansion_budget},
            {"sampling", sampling_to_json(td.sampling)},
            {"decode_seed", td.seed}}},
          {"prestage",
           {{"num_candidates", prestage.num_candidates},
            {"max_kept", prestage.max_kept},
            {"filter", prestage.filter},
            {"answer_level", prestage.answer_level},
            {"sampling", sampling_to_json(prestage.sampling)}}}};
}

IterationPlan IterationPlan::from_json(const json& j) {
  IterationPlan p;
  p.num_iterations = j.value("num_iterations", p.num_iterations);
  p.epochs_per_iteration = j.value("epochs_per_iteration", p.epochs_per_iteration);
  p.objective_lambda = j.value("objective_lambda", p.objective_lambda);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.grad_clip = j.value("grad_clip", p.grad_clip);
  p.continue_from_previous = j.value("continue_from_previous", p.continue_from_previous);
  p.answer_level = j.value("answer_level", p.answer_level);
  p.eval_hierarchical = j.value("eval_hierarchical", p.eval_hierarchical);
  p.seed = j.value("seed", p.seed);
  if (j.contains("tree")) {
    const json& t = j["tree"];
    p.tree.branching = t.value("branching", p.tree.branching);
    p.tree.max_depth = t.value("max_depth", p.tree.max_depth);
    p.tree.node_budget = t.value("node_budget", p.tree.node_budget);
    p.tree.resample_attempts = t.value("resample_attempts", p.tree.resample_attempts);
    if (t.contains("sampling")) p.tree.sampling = sampling_from_json(t["sampling"], p.tree.sampling);
  }
  if (j.contains("inference")) {
    const json& t = j["inference"];
    auto& ic = p.inference;
    ic.num_beams = t.value("num_beams", ic.num_beams);
    ic.beam_width = t.value("beam_width", ic.beam_width);
    ic.max_steps = t.value("max_steps", ic.max_steps);
    ic.max_tokens = t.value("max_tokens", ic.max_tokens);
    ic.stop_at_sentence_end = t.value("stop_at_sentence_end", ic.stop_at_sentence_end);
    if (t.contains("token_decode")) ic.token_decode.kind = decode_kind(t["token_decode"].get<std::string>());
    ic.token_decode.expansion_budget = t.value("expansion_budget", ic.token_decode.expansion_budget);
    ic.token_decode.seed = t.value("decode_seed", ic.token_decode.seed);
    if (t.contains("sampling")) ic.token_decode.sampling = sampling_from_json(t["sampling"], ic.token_decode.sampling);
  }
  if (j.contains("prestage")) {
    const json& t = j["prestage"];
    p.prestage.num_candidates = t.value("num_candidates", p.prestage.num_candidates);
    p.prestage.max_kept = t.value("max_kept", p.prestage.max_kept);
    p.prestage.filter = t.value("filter", p.prestage.filter);
    p.prestage.answer_level = t.value("answer_level", p.prestage.answer_level);
    if (t.contains("sampling")) p.prestage.sampling = sampling_from_json(t["sampling"], p.prestage.sampling);
  }
  if (p.num_iterations < 1 || p.epochs_per_iteration < 1 || p.batch_size < 1) {
    throw EvolveError("num_iterations, epochs_per_iteration and batch_size must be positive");
  }
  if (p.objective_lambda < 0.0) throw EvolveError("objective_lambda must be non-negative");
  return p;
}

std::string IterationPlan::hash() const { return content_hash(to_json().dump()); }

IterationPlan answer_level_mode(const IterationPlan& plan) {
  IterationPlan p = plan;
  p.answer_level = true;
  p.prestage.answer_level = true;
  p.tree.max_depth = 1;
  p.tree.sampling.stop_at_sentence_end = false;
  return p;
}

std::vector<std::string> plan_segments(const IterationPlan& plan, std::string_view answer) {
  if (!plan.answer_level) return split_sentences(answer);
  const auto b = answer.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = answer.find_last_not_of(" \t\r\n");
  return {std::string(answer.substr(b, e - b + 1))};
}

json EvalSummary::to_json() const {
  return {{"em_recall", em_recall}, {"hit", hit}, {"faithfulness_proxy", faithfulness_proxy}};
}

json IterationRecord::to_json() const {
  json j = {{"iteration", iteration},
            {"stage", stage},
            {"dataset", dataset_path},
            {"dataset_hash", dataset_hash},
            {"pairs", pairs},
            {"data_stats", data_stats},
            {"source_params_hash", source_params_hash},
            {"checkpoint", checkpoint_path},
            {"params_hash", params_hash},
            {"config_hash", config_hash},
            {"train_log", train_log_path},
            {"train_steps", train_steps},
            {"mean_loss", mean_loss},
            {"metrics", {{"greedy", greedy.to_json()}}}};
  if (hierarchical) j["metrics"]["hierarchical"] = hierarchical->to_json();
  return j;
}

json RunManifest::to_json() const {
  json its = json::array();
  for (const auto& r : iterations) its.push_back(r.to_json());
  json j = {{"plan", plan},
            {"plan_hash", plan_hash},
            {"base_params_hash", base_params_hash},
            {"base_config_hash", base_config_hash},
            {"corpus_hash", corpus_hash},
            {"eval_corpus_hash", eval_corpus_hash},
            {"iterations", std::move(its)},
            {"completed", completed}};
  if (!error.empty()) j["error"] = error;
  return j;
}

std::vector<AnswerRecord> generate_answers(const LanguageModel& lm, std::span<const QAItem> corpus,
                                           const InferenceConfig& cfg, const std::string& mode) {
  std::vector<AnswerRecord> out;
  for (const auto& item : corpus) {
    GenerationResult r;
    if (mode == "greedy") {
      r = generate_greedy(lm, item, cfg);
    } else if (mode == "beam") {
      r = beam_generate(lm, item, cfg);
    } else if (mode == "hierarchical") {
      r = hierarchical_generate(lm, item, cfg);
    } else {
      throw EvolveError("unknown generation mode '" + mode + "'");
    }
    out.push_back({item.id, r.answer, r.score.normalized, mode});
  }
  return out;
}

RunManifest run_evolution(const IterationPlan& plan, const ToyLM& base, std::span<const QAItem> corpus,
                          std::span<const QAItem> eval_corpus, const fs::path& out_dir) {
  if (corpus.empty()) throw EvolveError("empty training corpus");
  for (const auto& item : corpus) {
    if (!item.gold_answer || item.short_answers.empty()) {
      throw EvolveError("item '" + item.id + "' needs a gold answer and short-answer sets");
    }
  }
  const std::span<const QAItem> eval_items = eval_corpus.empty() ? corpus : eval_corpus;
  fs::create_directories(out_dir);

  RunManifest manifest;
  manifest.plan = plan.to_json();
  manifest.plan_hash = plan.hash();
  manifest.base_params_hash = base.parameter_hash();
  manifest.base_config_hash = base.config_hash();
  manifest.corpus_hash = content_hash(corpus_to_jsonl(corpus));
  manifest.eval_corpus_hash = content_hash(corpus_to_jsonl(eval_items));
  const fs::path manifest_path = out_dir / "manifest.json";
  auto flush = [&] { write_text_file(manifest_path, manifest.to_json().dump(2) + "\n"); };
  write_text_file(out_dir / "plan.json", manifest.plan.dump(2) + "\n");

  ToyLM model = base;
  LexicalSupportJudge judge;
  const CombinedObjective objective{plan.objective_lambda, 1.0};

  try {
    for (int it = 1; it <= plan.num_iterations; ++it) {
      const std::uint64_t iseed = derive_seed(plan.seed, {static_cast<std::uint64_t>(it)});
      const fs::path dir = out_dir / ("iter" + std::to_string(it));
      fs::create_directories(dir);
      IterationRecord rec;
      rec.iteration = it;
      rec.source_params_hash = model.parameter_hash();
      spdlog::info("iteration {}: building data with params {}", it, rec.source_params_hash);

      std::vector<ContrastiveInstance> instances;
      if (it == 1) {
        rec.stage = "prestage";
        PrestageConfig pc = plan.prestage;
        pc.answer_level = plan.answer_level;
        pc.seed = derive_seed(iseed, {1});
        PrestageResult pr = build_prestage_dataset(model, corpus, pc);
        instances = std::move(pr.instances);
        rec.data_stats = pr.stats.to_json();
      } else {
        rec.stage = "treesample";
        int trees = 0, terminated = 0, nodes = 0;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
          const SampleTree tree = grow_tree(model, corpus[i], plan.tree, derive_seed(iseed, {2, i}));
          if (tree.nodes.size() <= 1) continue;
          ++trees;
          nodes += static_cast<int>(tree.nodes.size()) - 1;
          const PathCandidate best = select_best_path(tree, corpus[i], model.vocab());
          if (best.terminated) ++terminated;
          for (auto& inst : extract_pairs(tree, best, corpus[i])) instances.push_back(std::move(inst));
        }
        rec.data_stats = {{"trees", trees}, {"terminated_best_paths", terminated}, {"nodes", nodes}};
      }
      rec.pairs = static_cast<int>(instances.size());
      const std::string dataset = instances_to_jsonl(instances, model.vocab());
      write_text_file(dir / "dataset.jsonl", dataset);
      rec.dataset_path = rel(dir / "dataset.jsonl", out_dir);
      rec.dataset_hash = content_hash(dataset);

      if (!plan.continue_from_previous) model = base;
      std::string log_lines;
      LossBreakdown sum{};
      if (instances.empty()) {
        spdlog::warn("iteration {}: no training pairs, checkpoint carries over unchanged", it);
      } else {
        const auto examples = resolve_instances(instances, corpus, model.vocab());
        AdamW opt;
        const EpochConfig ec{plan.batch_size, plan.learning_rate, plan.grad_clip};
        for (int ep = 0; ep < plan.epochs_per_iteration; ++ep) {
          for (const auto& s : train_epoch(model, opt, examples, objective, ec,
                                           derive_seed(iseed, {3, static_cast<std::uint64_t>(ep)}))) {
            log_lines += json{{"step", s.step}, {"lm", s.loss.lm_term}, {"disc", s.loss.disc_term},
                              {"total", s.loss.total}}
                             .dump() +
                         "\n";
            sum.lm_term += s.loss.lm_term;
            sum.disc_term += s.loss.disc_term;
            sum.total += s.loss.total;
            ++rec.train_steps;
          }
        }
      }
      write_text_file(dir / "train_log.jsonl", log_lines);
      rec.train_log_path = rel(dir / "train_log.jsonl", out_dir);
      const double n = std::max(rec.train_steps, 1);
      rec.mean_loss = {{"lm", sum.lm_term / n}, {"disc", sum.disc_term / n}, {"total", sum.total / n}};

      model.save(dir / "checkpoint.json");
      rec.checkpoint_path = rel(dir / "checkpoint.json", out_dir);
      rec.params_hash = model.parameter_hash();
      rec.config_hash = model.config_hash();

      const auto greedy = generate_answers(model, eval_items, plan.inference, "greedy");
      write_text_file(dir / "answers_greedy.jsonl", answers_to_jsonl(greedy));
      const EvalReport gr = evaluate(greedy, eval_items, judge);
      write_text_file(dir / "eval_greedy.json", gr.to_json().dump(2) + "\n");
      rec.greedy = {gr.em_recall, gr.hit, gr.faithfulness_proxy};
      if (plan.eval_hierarchical) {
        const auto hier = generate_answers(model, eval_items, plan.inference, "hierarchical");
        write_text_file(dir / "answers_hierarchical.jsonl", answers_to_jsonl(hier));
        const EvalReport hr = evaluate(hier, eval_items, judge);
        write_text_file(dir / "eval_hierarchical.json", hr.to_json().dump(2) + "\n");
        rec.hierarchical = EvalSummary{hr.em_recall, hr.hit, hr.faithfulness_proxy};
      }
      spdlog::info("iteration {}: {} pairs, greedy faithfulness {:.4f}{}", it, rec.pairs, rec.greedy.faithfulness_proxy,
                   rec.hierarchical ? fmt::format(", hierarchical {:.4f}", rec.hierarchical->faithfulness_proxy) : "");
      manifest.iterations.push_back(std::move(rec));
      flush();
    }
    manifest.completed = true;
    flush();
  } catch (const std::exception& e) {
    manifest.error = e.what();
    flush();
    throw EvolveError(std::string("evolution aborted: ") + e.what());
  }
  return manifest;
}

}  // namespace gendie
