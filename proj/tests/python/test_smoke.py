import json
import math

import pytest

import gendie

QUICK = {"steps": 40, "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16}}


@pytest.fixture(scope="module")
def corpus():
    return gendie.synth_corpus(corpus={"size": 4, "seed": 11})


@pytest.fixture(scope="module")
def model():
    lm, losses = gendie.pretrain(config=QUICK)
    assert len(losses) == QUICK["steps"]
    return lm


def test_synth_corpus_shape(corpus):
    assert len(corpus) == 4
    for item in corpus:
        assert item["passages"] and item["gold_answer"] and item["short_answers"]


def test_synth_corpus_is_deterministic(corpus):
    assert gendie.synth_corpus(corpus={"size": 4, "seed": 11}) == corpus


def test_em_recall():
    assert gendie.em_recall("The cat sat.", [["cat"], ["dog"]]) == 0.5


def test_model_roundtrip(model, tmp_path):
    path = tmp_path / "m.json"
    model.save(path)
    loaded = gendie.ToyLM.load(path)
    assert loaded.parameter_hash == model.parameter_hash
    assert loaded.num_parameters == model.num_parameters


def test_score_is_mean_logprob(model, corpus):
    item = corpus[0]
    s = gendie.score_sentence(model, item, [], item["gold_answer"].split(". ")[0] + ".")
    assert s < 0.0 and math.isfinite(s)


def test_generate_and_evaluate(model, corpus):
    answers = gendie.generate(model, corpus, mode="greedy", max_steps=2, max_tokens=12)
    assert [a["id"] for a in answers] == [c["id"] for c in corpus]
    report = gendie.evaluate(answers, corpus)
    assert report["items"] == len(corpus)
    assert 0.0 <= report["faithfulness_proxy"] <= 1.0


def test_gold_answers_are_fully_supported(corpus):
    answers = [{"id": c["id"], "answer": c["gold_answer"]} for c in corpus]
    report = gendie.evaluate(answers, corpus)
    assert report["em_recall"] == 1.0
    assert report["faithfulness_proxy"] == pytest.approx(1.0)


def test_unknown_answer_id_rejected(corpus):
    with pytest.raises(gendie.EvalError):
        gendie.evaluate([{"id": "missing", "answer": "x."}], corpus)


def test_prestage_pairs_share_prefix(model, corpus):
    instances, stats = gendie.prestage(model, corpus, seed=1)
    assert stats["kept_pairs"] == len(instances)
    for inst in instances:
        assert inst["target"] != inst["negative"]


def test_treesample_is_deterministic(model, corpus):
    a = gendie.treesample(model, corpus, seed=2, max_depth=2, node_budget=12)
    b = gendie.treesample(model, corpus, seed=2, max_depth=2, node_budget=12)
    assert a == b


def test_evolve_writes_manifest(model, corpus, tmp_path):
    plan = {"num_iterations": 1, "eval_hierarchical": False}
    manifest = gendie.evolve(model, corpus, corpus, tmp_path, plan)
    assert manifest["completed"]
    assert len(manifest["iterations"]) == 1
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["plan_hash"] == manifest["plan_hash"]
