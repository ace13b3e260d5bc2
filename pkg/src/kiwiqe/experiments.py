"""Synthetic-data experiment recipes shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import split_halves
from .encoder import EncoderConfig
from .ensemble import combine, search_weights
from .explain import ensemble_for_examples, rank_heads, top_heads
from .metrics import explanation_scores, mcc, spearman
from .qe_model import LossConfig, ModelConfig, build_model
from .synthetic import SyntheticConfig, SyntheticCorpus
from .training import TrainConfig, evaluate, finetune_fewshot, train

log = logging.getLogger(__name__)

SIZES = {
    "base": dict(num_layers=4, num_heads=4, model_dim=64, ffn_dim=128),
    "small": dict(num_layers=2, num_heads=2, model_dim=32, ffn_dim=64),
}


@dataclass
class SyntheticData:
    corpus: SyntheticCorpus
    train: list
    dev: list
    test: list


def synthetic_data(seed: int, n_train: int = 2000, n_dev: int = 500, n_test: int = 500, lps=None) -> SyntheticData:
    """World and samples both keyed on ``seed``."""
    corpus = SyntheticCorpus(SyntheticConfig(seed=seed))
    base = seed * 7919
    return SyntheticData(corpus, corpus.sample(n_train, base + 1, lps), corpus.sample(n_dev, base + 2, lps),
                         corpus.sample(n_test, base + 3, lps))


def model_config(lambda_s: float = 1.0, lambda_w: float = 1.0, seed: int = 0, size: str = "base",
                 mix: str = "scalar") -> ModelConfig:
    enc = EncoderConfig(**SIZES[size], max_positions=64, seed=seed)
    return ModelConfig(enc, LossConfig(lambda_s, lambda_w), mix=mix)


@dataclass
class RunResult:
    model: object
    history: list
    best: dict  # history row of the selected epoch
    seconds: float
    extra: dict = field(default_factory=dict)

    @property
    def dev(self) -> dict:
        return self.best["dev"]["average"]


def train_run(data: SyntheticData, lambda_s: float = 1.0, lambda_w: float = 1.0, seed: int = 0, size: str = "base",
              epochs: int = 50, patience: int | None = 8, lr: float = 2e-3, vocab_examples=None) -> RunResult:
    config = model_config(lambda_s, lambda_w, seed, size)
    model = build_model(vocab_examples or (data.train + data.dev + data.test), config)
    t0 = time.perf_counter()
    best_model, history = train(model, data.train, data.dev,
                                TrainConfig(epochs=epochs, learning_rate=lr, patience=patience, seed=seed))
    seconds = time.perf_counter() - t0
    best = max(history, key=lambda r: r["value"])
    log.info("lambda=(%g, %g) seed %d: best epoch %d %s=%.4f in %.0fs", lambda_s, lambda_w, seed, best["epoch"],
             best["metric"], best["value"], seconds)
    return RunResult(best_model, history, best, seconds)


# few-shot adaptation ----------------------------------------------------------------

def fewshot_experiment(seed: int = 0, n_new: int = 1000, epochs: int = 20, lr: float = 5e-4, patience: int = 5,
                       size: str = "base") -> dict:
    """Pretrain without the last language pair, then adapt on half of ``n_new`` of its examples."""
    corpus = SyntheticCorpus(SyntheticConfig(seed=seed))
    held, seen = corpus.lps[-1], corpus.lps[:-1]
    base = seed * 7919
    data = SyntheticData(corpus, corpus.sample(2000, base + 1, seen), corpus.sample(500, base + 2, seen), [])
    new = corpus.sample(n_new, base + 4, [held])
    adapt, validation = split_halves(new, seed)
    pre = train_run(data, seed=seed, size=size, vocab_examples=data.train + data.dev + new)
    tuned, summary = finetune_fewshot(pre.model, adapt, TrainConfig(epochs=epochs, learning_rate=lr,
                                                                    patience=patience, seed=seed),
                                      validation, data.dev, guard_band=0.02)
    before = summary["before"]["per_lp"][held]["spearman"]
    after = summary["after"]["per_lp"][held]["spearman"]
    drops = {lp: summary["guard_before"]["per_lp"][lp]["spearman"] - summary["guard_after"]["per_lp"][lp]["spearman"]
             for lp in seen}
    return {"held_out": held, "n_adapt": len(adapt), "before": before, "after": after, "gain": after - before,
            "other_drops": drops, "summary": summary}


# ensembles --------------------------------------------------------------------------

def _predict_kind(model, examples, kind: str) -> list:
    preds = model.predict(examples)
    if kind == "scores":
        return [p.sentence_score for p in preds]
    if kind == "logits":
        return [p.word_logits for p in preds]
    return [np.array([t == "BAD" for t in p.word_tags]) for p in preds]


def _per_lp_mcc(tag_rows, examples) -> float:
    lps = sorted({ex.lp for ex in examples})
    vals = []
    for lp in lps:
        idx = [i for i, ex in enumerate(examples) if ex.lp == lp]
        vals.append(mcc(np.concatenate([tag_rows[i] for i in idx]), np.concatenate([examples[i].bad_mask for i in idx])))
    return float(np.mean(vals))


def _lp_metric(kind: str, rows, examples, lp: str) -> float:
    idx = [i for i, ex in enumerate(examples) if ex.lp == lp]
    if kind == "scores":
        return spearman([rows[i] for i in idx], [examples[i].score for i in idx])
    return mcc(np.concatenate([rows[i] for i in idx]), np.concatenate([examples[i].bad_mask for i in idx]))


def _as_tags(kind: str, rows) -> list:
    if kind == "logits":
        return [np.asarray(r)[:, 1] >= np.asarray(r)[:, 0] for r in rows]
    return rows


def ensemble_trial(trial: int, n_members: int = 3, size: str = "small", epochs: int = 30, patience: int = 5) -> dict:
    """Independently seeded members on one world; weights searched on dev, scored on test."""
    data = synthetic_data(100 + trial)
    members = [train_run(data, seed=1000 * trial + k, size=size, epochs=epochs, patience=patience).model
               for k in range(n_members)]
    dev_lps = [ex.lp for ex in data.dev]
    out = {"search": {}, "dev_check": {}}
    for kind in ("scores", "logits", "tags"):
        preds = [_predict_kind(m, data.dev, kind) for m in members]
        gold = [ex.score for ex in data.dev] if kind == "scores" else [ex.bad_mask for ex in data.dev]
        spec = search_weights(preds, gold, dev_lps, kind, seed=trial)
        out["search"][kind] = spec
        # recomputed from the predictions, not taken from the search
        combined = combine(spec, preds, dev_lps, kind)
        out["dev_check"][kind] = {lp: (_lp_metric(kind, combined, data.dev, lp),
                                       [_lp_metric(kind, _as_tags(kind, p), data.dev, lp) for p in preds])
                                  for lp in sorted(set(dev_lps))}
        if kind == "logits":
            logit_spec = spec
    test_logits = [_predict_kind(m, data.test, "logits") for m in members]
    test_tags = [_predict_kind(m, data.test, "tags") for m in members]
    combined = combine(logit_spec, test_logits, [ex.lp for ex in data.test], "logits")
    out["member_test_mcc"] = [_per_lp_mcc(t, data.test) for t in test_tags]
    out["ensemble_test_mcc"] = _per_lp_mcc(combined, data.test)
    out["members"] = members
    out["data"] = data
    return out


# explainer signal -------------------------------------------------------------------

def explainer_signal(model, dev, test, n_sentences: int = 20, k: int = 5) -> dict:
    """R@K of top-k head ensembles (both explainers) on the first ``n_sentences``
    test sentences that contain an error, against the random K/n expectation."""
    chosen = [ex for ex in test if ex.tags and "BAD" in ex.tags][:n_sentences]
    gold = [ex.bad_mask for ex in chosen]
    random_rk = float(np.mean([g.sum() / len(g) for g in gold]))
    out = {"random": random_rk, "n": len(chosen)}
    for method in ("attn_gradnorm", "attn_norm"):
        heads = top_heads(rank_heads(model, dev, method), k)
        expl = ensemble_for_examples(model, chosen, heads, method)
        scores = explanation_scores([e.word_scores for e in expl], gold)
        out[method] = {"heads": heads, **scores}
    return out
