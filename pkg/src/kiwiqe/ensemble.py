"""Sentence-score, word-logit and word-tag ensembles with per-LP weight search."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import mcc, spearman
from .numerics import _softmax_np

STRATEGIES = ("best_only", "scores", "logits", "tags")
ALPHA_RANGE = (0.5, 4.0)
WEIGHT_GRID = np.linspace(0.0, 1.0, 11)
ALPHA_GRID = np.linspace(ALPHA_RANGE[0], ALPHA_RANGE[1], 15)


def _weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"{n} members but {w.size} weights")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("weights are all zero")
    return w


def ensemble_scores(predictions, weights):
    """Normalised weighted mean sum_i w_i y_i / sum_i w_i over the member axis."""
    preds = np.asarray(predictions, dtype=float)
    w = _weights(weights, preds.shape[0])
    return np.tensordot(w, preds, axes=1) / w.sum()


def ensemble_logits(logit_vectors, weights, threshold: float = 0.5):
    """Weighted (normalised) sum of member logits; returns (logits, BAD mask)."""
    logits = np.asarray(logit_vectors, dtype=float)
    if logits.ndim != 3 or logits.shape[-1] != 2:
        raise ValueError(f"expected member logits shaped (M, n, 2), got {logits.shape}")
    w = _weights(weights, logits.shape[0])
    combined = np.tensordot(w, logits, axes=1) / w.sum()
    if combined.shape[0] == 0:
        return combined, np.zeros(0, dtype=bool)
    return combined, _softmax_np(combined)[:, 1] >= threshold


def ensemble_tags(tag_vectors, weights, alpha: float = 1.0):
    """BAD where alpha * sum_i w_i c_i / sum_i w_i >= 0.5 (c_i = 1 for BAD)."""
    tags = np.asarray(tag_vectors)
    if tags.dtype.kind in "US":
        tags = tags == "BAD"
    tags = tags.astype(float)
    if tags.ndim != 2:
        raise ValueError("tag vectors must have equal lengths")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = _weights(weights, tags.shape[0])
    return alpha * np.tensordot(w, tags, axes=1) / w.sum() >= 0.5


@dataclass
class EnsembleSpec:
    members: list
    strategy: str
    weights: dict = field(default_factory=dict)  # lp -> list of member weights
    alpha: dict = field(default_factory=dict)  # lp -> BAD weight (tags strategy)
    dev_metric: dict = field(default_factory=dict)
    fallback: dict = field(default_factory=dict)  # lp -> True when best_only was kept
    kind: str | None = None  # prediction type the weights apply to

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.kind is None:
            self.kind = "scores" if self.strategy == "best_only" else self.strategy
        for lp, w in self.weights.items():
            _weights(w, len(self.members))

    def weights_for(self, lp: str) -> np.ndarray:
        if lp in self.weights:
            return np.asarray(self.weights[lp], dtype=float)
        if "*" in self.weights:
            return np.asarray(self.weights["*"], dtype=float)
        raise KeyError(f"no ensemble weights for language pair {lp!r}")

    def alpha_for(self, lp: str) -> float:
        return float(self.alpha.get(lp, self.alpha.get("*", 1.0)))

    def to_dict(self) -> dict:
        return {"members": list(self.members), "strategy": self.strategy,
                "weights": {k: [float(x) for x in v] for k, v in sorted(self.weights.items())},
                "alpha": {k: float(v) for k, v in sorted(self.alpha.items())},
                "dev_metric": {k: float(v) for k, v in sorted(self.dev_metric.items())},
                "fallback": dict(sorted(self.fallback.items())), "kind": self.kind}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EnsembleSpec":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


# combining member predictions -------------------------------------------------

def combine(spec: EnsembleSpec, members: list, lps: list, kind: str | None = None):
    """Apply ``spec`` per LP.

    ``members[i]`` holds member ``i``'s per-sentence predictions: a float per
    sentence for scores, an ``(n, 2)`` array per sentence for logits, a 0/1
    array per sentence for tags.  Returns a list aligned with ``lps``.
    """
    kind = kind or spec.kind
    out = []
    for j, lp in enumerate(lps):
        w = spec.weights_for(lp)
        per_member = [m[j] for m in members]
        if kind == "scores":
            out.append(float(ensemble_scores(per_member, w)))
        elif kind == "logits":
            out.append(ensemble_logits(per_member, w)[1])
        elif kind == "tags":
            out.append(ensemble_tags(per_member, w, spec.alpha_for(lp)))
        else:
            raise ValueError(f"unknown prediction kind {kind!r}")
    return out


def _objective(kind: str, members, gold, idx):
    """Return f(weights, alpha) -> dev metric restricted to sentences ``idx``."""
    if kind == "scores":
        preds = np.asarray([[m[j] for j in idx] for m in members], dtype=float)
        y = np.asarray([gold[j] for j in idx], dtype=float)

        def f(w, alpha=1.0):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                v = spearman(ensemble_scores(preds, w), y)
            return -math.inf if math.isnan(v) else v
        return f
    flat_gold = np.concatenate([np.asarray(gold[j]).astype(bool) for j in idx]) if idx else np.zeros(0, bool)
    if kind == "logits":
        stacked = np.stack([np.concatenate([np.asarray(m[j], float) for j in idx]) for m in members])

        def f(w, alpha=1.0):
            return mcc(ensemble_logits(stacked, w)[1], flat_gold)
        return f
    if kind == "tags":
        stacked = np.stack([np.concatenate([np.asarray(m[j]).astype(float) for j in idx]) for m in members])

        def f(w, alpha=1.0):
            return mcc(ensemble_tags(stacked, w, alpha), flat_gold)
        return f
    raise ValueError(f"cannot search strategy {kind!r}")


def search_weights(members: list, gold: list, lps: list, strategy: str, budget: int = 128,
                   sweeps: int = 2, seed: int = 0, member_ids=None, alpha: float | None = None) -> EnsembleSpec:
    """Random search plus coordinate refinement of member weights, per LP.

    Maximises Spearman (scores) or MCC (logits, tags; alpha is also searched
    for tags unless fixed by ``alpha``).  Whenever the search does not beat the
    best single member on an LP, that LP falls back to the best member alone.
    """
    if strategy not in ("scores", "logits", "tags"):
        raise ValueError(f"cannot search strategy {strategy!r}")
    if not gold:
        raise ValueError("empty dev set")
    M = len(members)
    member_ids = list(member_ids) if member_ids is not None else [f"m{i}" for i in range(M)]
    rng = np.random.default_rng(seed)
    spec = EnsembleSpec(member_ids, strategy, kind=strategy)
    for lp in sorted(set(lps)):
        idx = [j for j, l in enumerate(lps) if l == lp]
        f = _objective(strategy, members, gold, idx)
        a0 = 1.0 if alpha is None else float(alpha)
        singles = [f(np.eye(M)[i], a0) for i in range(M)]
        best_single = int(np.argmax(singles))
        best_w, best_a, best_v = np.eye(M)[best_single], a0, singles[best_single]
        tuned_w, tuned_a, tuned_v = None, a0, -math.inf
        search_alpha = strategy == "tags" and alpha is None
        for _ in range(budget):
            w = rng.uniform(0.0, 1.0, size=M)
            a = float(rng.uniform(*ALPHA_RANGE)) if search_alpha else a0
            v = f(w, a)
            if v > tuned_v:
                tuned_w, tuned_a, tuned_v = w, a, v
        if tuned_w is not None:
            for _ in range(sweeps):
                for i in range(M):
                    for g in WEIGHT_GRID:
                        w = tuned_w.copy()
                        w[i] = g
                        if not np.any(w > 0):
                            continue
                        v = f(w, tuned_a)
                        if v > tuned_v:
                            tuned_w, tuned_v = w, v
                if search_alpha:
                    for a in ALPHA_GRID:
                        v = f(tuned_w, float(a))
                        if v > tuned_v:
                            tuned_a, tuned_v = float(a), v
        fallback = not tuned_v > best_v
        if not fallback:
            best_w, best_a, best_v = tuned_w, tuned_a, tuned_v
        spec.weights[lp] = [float(x) for x in best_w]
        spec.fallback[lp] = bool(fallback)
        spec.dev_metric[lp] = float(best_v)
        if strategy == "tags":
            spec.alpha[lp] = float(best_a)
    if all(spec.fallback.values()):
        spec.strategy = "best_only"
    return spec


# member prediction files ------------------------------------------------------

def write_scores(path, scores) -> None:
    Path(path).write_text("".join(f"{float(s)!r}\n" for s in scores), encoding="utf-8")


def read_scores(path) -> list[float]:
    return [float(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def write_tags(path, tag_rows) -> None:
    lines = []
    for row in tag_rows:
        row = np.asarray(row)
        bad = row == "BAD" if row.dtype.kind in "US" else row.astype(bool)
        lines.append(" ".join("BAD" if b else "OK" for b in bad))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_tags(path) -> list[np.ndarray]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").split("\n")[:-1]:
        toks = line.split()
        if any(t not in ("OK", "BAD") for t in toks):
            raise ValueError(f"{path}: tags must be OK/BAD")
        rows.append(np.array([t == "BAD" for t in toks], dtype=bool))
    return rows


def write_logits(path, logit_rows) -> None:
    lines = [" ".join(f"{a!r},{b!r}" for a, b in np.asarray(row, float).reshape(-1, 2).tolist())
             for row in logit_rows]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_logits(path) -> list[np.ndarray]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").split("\n")[:-1]:
        pairs = [tuple(float(x) for x in tok.split(",")) for tok in line.split()]
        if any(len(p) != 2 for p in pairs):
            raise ValueError(f"{path}: logits must be 'ok,bad' pairs")
        rows.append(np.array(pairs, dtype=float).reshape(-1, 2))
    return rows
