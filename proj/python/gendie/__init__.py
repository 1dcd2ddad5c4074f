"""Python interface to the gendie core."""

import json
import os

from . import _gendie
from ._gendie import CorpusError, EvalError, EvolveError, ToyLM, VocabError, em_recall

__all__ = [
    "CorpusError",
    "EvalError",
    "EvolveError",
    "ToyLM",
    "VocabError",
    "em_recall",
    "evaluate",
    "evolve",
    "generate",
    "prestage",
    "pretrain",
    "read_jsonl",
    "score_sentence",
    "synth_corpus",
    "to_jsonl",
    "treesample",
]


def _dump(config):
    return json.dumps(config) if config else ""


def to_jsonl(records):
    return "".join(json.dumps(r) + "\n" for r in records)


def read_jsonl(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _jsonl(records):
    return records if isinstance(records, str) else to_jsonl(records)


def synth_corpus(world=None, corpus=None):
    """Synthetic QA items as a list of dicts."""
    return read_jsonl(_gendie.synth_corpus(_dump(world), _dump(corpus)))


def pretrain(world=None, config=None):
    """Trains a base model; returns (model, per-step losses)."""
    return _gendie.pretrain(_dump(world), _dump(config))


def generate(model, corpus, mode="hierarchical", token_decode="beam", num_beams=3, beam_width=3, max_steps=6,
             max_tokens=64, seed=0):
    return read_jsonl(_gendie.generate(model, _jsonl(corpus), mode, token_decode, num_beams, beam_width, max_steps,
                                       max_tokens, seed))


def evaluate(answers, corpus, allow_empty=False):
    return json.loads(_gendie.evaluate(_jsonl(answers), _jsonl(corpus), allow_empty))


def prestage(model, corpus, seed=0, filter=True, answer_level=False):
    """Pre-stage contrastive instances and the run statistics."""
    instances, stats = _gendie.prestage(model, _jsonl(corpus), seed, filter, answer_level)
    return read_jsonl(instances), json.loads(stats)


def treesample(model, corpus, seed=0, branching=3, max_depth=6, node_budget=120):
    return read_jsonl(_gendie.treesample(model, _jsonl(corpus), seed, branching, max_depth, node_budget))


def score_sentence(model, item, prefix, sentence):
    return _gendie.score_sentence(model, json.dumps(item) + "\n", list(prefix), sentence)


def evolve(base, corpus, eval_corpus, out_dir, plan=None):
    """Runs the self-evolution loop and returns the manifest."""
    return json.loads(_gendie.evolve(base, _dump(plan), _jsonl(corpus), _jsonl(eval_corpus), os.fspath(out_dir)))
