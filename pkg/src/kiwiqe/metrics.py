"""Shared-task metrics.  BAD is the positive class everywhere."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


def _as_bad(tags) -> np.ndarray:
    arr = np.asarray(tags)
    if arr.dtype.kind in "US":
        return arr == "BAD"
    return arr.astype(bool)


def _pair(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        warnings.warn("correlation undefined for constant input", RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(np.clip(xc @ yc / denom, -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def mae(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean(np.abs(x - y)))


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def confusion(pred_tags, gold_tags) -> tuple[int, int, int, int]:
    p, g = _as_bad(pred_tags), _as_bad(gold_tags)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    tp = int(np.sum(p & g))
    tn = int(np.sum(~p & ~g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    return tp, tn, fp, fn


def _mcc_counts(tp, tn, fp, fn) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(denom))


def mcc(pred_tags, gold_tags) -> float:
    return _mcc_counts(*confusion(pred_tags, gold_tags))


def _f1(tp, fp, fn) -> float:
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def f1_ok_bad(pred_tags, gold_tags) -> tuple[float, float]:
    tp, tn, fp, fn = confusion(pred_tags, gold_tags)
    return _f1(tn, fn, fp), _f1(tp, fp, fn)


def auc(scores, gold_tags) -> float:
    """Mann-Whitney AUC with tie-averaged ranks."""
    s = np.asarray(scores, dtype=float)
    g = _as_bad(gold_tags)
    n_pos, n_neg = int(g.sum()), int((~g).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both BAD and OK tokens")
    ranks = rankdata(s)
    return float((ranks[g].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def ap(scores, gold_tags) -> float:
    """Average precision; tied scores are consumed as one group."""
    s = np.asarray(scores, dtype=float)
    g = _as_bad(gold_tags)
    n_pos = int(g.sum())
    if n_pos == 0:
        raise ValueError("AP needs at least one BAD token")
    total, seen, hits = 0.0, 0, 0
    for value in np.unique(s)[::-1]:
        group = s == value
        seen += int(group.sum())
        new_hits = int(g[group].sum())
        hits += new_hits
        total += (hits / seen) * (new_hits / n_pos)
    return float(total)


def recall_at_k(scores, gold_tags) -> float:
    """Fraction of gold BAD tokens among the K best-scored, K = #BAD (stable order)."""
    s = np.asarray(scores, dtype=float)
    g = _as_bad(gold_tags)
    k = int(g.sum())
    if k == 0:
        raise ValueError("R@K needs at least one BAD token")
    top = np.argsort(-s, kind="stable")[:k]
    return float(g[top].sum() / k)


def explanation_scores(score_lists, tag_lists, micro: bool = False) -> dict:
    """Corpus AUC/AP/R@K over sentences that contain at least one BAD tag.

    Sentences with no OK tokens are skipped for AUC.  ``micro`` pools R@K hits
    over sentences instead of averaging per sentence.
    """
    aucs, aps, recs, hits, ks = [], [], [], 0, 0
    for scores, tags in zip(score_lists, tag_lists):
        g = _as_bad(tags)
        if not g.any():
            continue
        if not g.all():
            aucs.append(auc(scores, g))
        aps.append(ap(scores, g))
        recs.append(recall_at_k(scores, g))
        ks += int(g.sum())
        hits += recs[-1] * int(g.sum())
    if not aps:
        raise ValueError("no sentences with BAD tokens")
    rk = hits / ks if micro else float(np.mean(recs))
    out = {"auc": float(np.mean(aucs)) if aucs else float("nan"), "ap": float(np.mean(aps)), "recall_at_k": rk}
    out["mean"] = float(np.mean([v for v in out.values() if not math.isnan(v)]))
    return out


def mcc_best_threshold(scores, gold_binary) -> tuple[float, float]:
    """Sweep midpoints between sorted unique scores; predict positive when score > t.

    Returns the maximal MCC and the lowest threshold achieving it.
    """
    s = np.asarray(scores, dtype=float)
    g = np.asarray(gold_binary).astype(bool)
    if g.all() or not g.any():
        raise ValueError("mcc_best_threshold needs both classes")
    u = np.unique(s)
    if len(u) == 1:
        return 0.0, float(u[0])
    best, best_t = -2.0, None
    for t in (u[:-1] + u[1:]) / 2.0:
        m = mcc(s > t, g)
        if m > best:
            best, best_t = m, float(t)
    return best, best_t


@dataclass
class EvalReport:
    per_lp: dict = field(default_factory=dict)

    @property
    def average(self) -> dict:
        names = sorted({k for v in self.per_lp.values() for k in v})
        avg = {}
        for name in names:
            vals = [v[name] for v in self.per_lp.values() if name in v]
            avg[name] = float(np.mean(vals))
        return avg

    def to_dict(self) -> dict:
        return {"per_lp": {lp: dict(sorted(m.items())) for lp, m in sorted(self.per_lp.items())},
                "average": self.average}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def to_tsv(self, path) -> None:
        rows = ["lp\tmetric\tvalue"]
        table = dict(sorted(self.per_lp.items()))
        table["avg"] = self.average
        for lp, metrics in table.items():
            for name, value in sorted(metrics.items()):
                rows.append(f"{lp}\t{name}\t{value:.6f}")
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    def format(self) -> str:
        names = sorted(self.average)
        lines = ["lp\t" + "\t".join(names)]
        for lp, m in sorted(self.per_lp.items()):
            lines.append(lp + "\t" + "\t".join(f"{m.get(n, float('nan')):.4f}" for n in names))
        lines.append("avg\t" + "\t".join(f"{self.average[n]:.4f}" for n in names))
        return "\n".join(lines)


def sentence_metrics(pred, gold) -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {"spearman": spearman(pred, gold), "pearson": pearson(pred, gold),
                "mae": mae(pred, gold), "rmse": rmse(pred, gold)}


def word_metrics(pred_tags, gold_tags) -> dict:
    f_ok, f_bad = f1_ok_bad(pred_tags, gold_tags)
    return {"mcc": mcc(pred_tags, gold_tags), "f1_ok": f_ok, "f1_bad": f_bad}
