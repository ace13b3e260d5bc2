"""Acceptance criteria 1-10.

Run under pytest (``pytest -v tests/test_acceptance.py``) or directly
(``python3 tests/test_acceptance.py [numbers...]``). Each criterion prints one
PASS/FAIL line; the slow ones (5-9) train the synthetic models once and share them.
"""
from __future__ import annotations

import functools
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from graphs import UNARY, build_graph, max_relative_error
from oracles import metric_oracle_sweep, simplex_projection_bisection
from kiwiqe import metrics as M
from kiwiqe import numerics as nx
from kiwiqe.experiments import ensemble_trial, explainer_signal, fewshot_experiment, synthetic_data, train_run
from kiwiqe.numerics import Tensor
from kiwiqe.qe_model import LossConfig, combined_loss, sentence_loss, word_loss

SEEDS = (0, 1, 2)
B, O = "BAD", "OK"


# shared slow runs ----------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def data(seed):
    return synthetic_data(seed)


@functools.lru_cache(maxsize=None)
def run(seed, lambda_s, lambda_w):
    return train_run(data(seed), lambda_s, lambda_w, seed=seed)


@functools.lru_cache(maxsize=None)
def trial(t):
    return ensemble_trial(t)


# criteria ------------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    errors = [max_relative_error(s) for s in range(100)]
    seconds = time.perf_counter() - t0
    covered = set()
    for s in range(100):
        covered.update(build_graph(s)[2])
    ok = max(errors) < 1e-4 and seconds < 30 and covered == set(UNARY)
    return ok, f"max rel err {max(errors):.2e} over 100 graphs, {len(covered)}/{len(UNARY)} op kinds, {seconds:.1f}s"


def criterion_2():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        z = rng.normal(scale=rng.uniform(0.1, 3.0), size=int(rng.integers(2, 17)))
        p = nx.sparsemax(Tensor(z)).data
        worst = max(worst, float(np.abs(p - simplex_projection_bisection(z)).max()))
    exact = nx.sparsemax(Tensor([2.0, 0.0])).data.tolist() == [1.0, 0.0]
    return worst < 1e-6 and exact, f"max |diff| {worst:.1e} on 1000 vectors, sparsemax([2,0]) exact: {exact}"


def criterion_3():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        gold = rng.random(n) < 0.4
        probs = rng.dirichlet((1.0, 1.0), size=n)
        probs = np.clip(probs, 1e-6, None)
        probs /= probs.sum(axis=1, keepdims=True)
        cw = tuple(rng.uniform(0.5, 3.0, size=2))
        ls = sentence_loss(rng.normal(), rng.normal())
        lw = word_loss(gold.astype(int), probs, cw)
        lam_s, lam_w = rng.uniform(0.0, 2.0, size=2)
        cfg = LossConfig(lam_s, lam_w, cw)
        bad += combined_loss(ls, lw, cfg) != lam_s * ls + lam_w * lw
        bad += combined_loss(ls, lw, LossConfig(1.0, 0.0, cw)) != ls
        bad += combined_loss(ls, lw, LossConfig(0.0, 1.0, cw)) != lw
    return bad == 0, f"{bad} inexact cases out of 3000 checks"


def criterion_4():
    worst = metric_oracle_sweep(1000)
    worked = {
        "spearman([1,2,3],[1,3,2])": (M.spearman([1, 2, 3], [1, 3, 2]), 0.5),
        "ap": (M.ap([0.9, 0.8, 0.1], [B, O, B]), 5 / 6),
        "4-point mcc": (M.mcc([O, O, B, B], [O, B, O, B]), 0.0),
    }
    worked_ok = all(abs(a - b) < 1e-9 for a, b in worked.values())
    ok = max(worst.values()) < 1e-9 and worked_ok and len(worst) == 10
    return ok, f"max |fast-brute| {max(worst.values()):.1e} over {len(worst)} metrics, worked examples ok: {worked_ok}"


def criterion_5():
    runs = [run(s, 1.0, 1.0) for s in SEEDS]
    sp = float(np.mean([r.dev["spearman"] for r in runs]))
    mc = float(np.mean([r.dev["mcc"] for r in runs]))
    epochs = max(len(r.history) for r in runs)
    slowest = max(r.seconds for r in runs)
    ok = sp >= 0.9 and mc >= 0.8 and epochs <= 50 and slowest < 600
    return ok, f"dev spearman {sp:.3f}, mcc {mc:.3f} (3 seeds), <= {epochs} epochs, slowest run {slowest:.0f}s"


def criterion_6():
    rows, wins = [], 0
    for s in SEEDS:
        multi, sent, word = run(s, 1.0, 1.0).dev, run(s, 1.0, 0.0).dev, run(s, 0.0, 1.0).dev
        win = multi["spearman"] >= sent["spearman"] - 0.02 and multi["mcc"] > word["mcc"]
        wins += win
        rows.append(f"s{s}: sp {multi['spearman']:.3f}/{sent['spearman']:.3f} "
                    f"mcc {multi['mcc']:.3f}/{word['mcc']:.3f}{'' if win else ' x'}")
    return wins >= 2, f"{wins}/3 seeds (multi/single) " + "; ".join(rows)


def criterion_7():
    r = fewshot_experiment(0)
    worst = max(r["other_drops"].values())
    ok = r["gain"] >= 0.02 and worst <= 0.02
    return ok, (f"{r['held_out']} spearman {r['before']:.3f} -> {r['after']:.3f} (+{r['gain']:.3f}) "
                f"on {r['n_adapt']} examples, worst other-shard drop {worst:+.3f}")


def criterion_8():
    guarantee, wins, rows = True, 0, []
    for t in range(3):
        out = trial(t)
        for per_lp in out["dev_check"].values():
            for value, singles in per_lp.values():
                guarantee &= value >= max(singles) - 1e-12
        mean_member = float(np.mean(out["member_test_mcc"]))
        wins += out["ensemble_test_mcc"] > mean_member
        rows.append(f"{out['ensemble_test_mcc']:.3f} vs {mean_member:.3f}")
    return guarantee and wins >= 2, f"dev >= best single: {guarantee}; test mcc ens vs mean member {wins}/3: " + \
        ", ".join(rows)


def criterion_9():
    sig = [explainer_signal(run(s, 1.0, 1.0).model, data(s).dev, data(s).test) for s in SEEDS]
    rand = float(np.mean([x["random"] for x in sig]))
    grad = float(np.mean([x["attn_gradnorm"]["recall_at_k"] for x in sig]))
    norm = float(np.mean([x["attn_norm"]["recall_at_k"] for x in sig]))
    n = sum(x["n"] for x in sig)
    return grad >= rand + 0.15, f"R@K gradnorm {grad:.3f}, norm {norm:.3f}, random {rand:.3f} ({n} sentences)"


def criterion_10():
    from test_cli import pipeline

    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        a, b = Path(a), Path(b)
        files_a, files_b = pipeline(a), pipeline(b)
        same = files_a == files_b
        diff = [str(f) for f in files_a if same and (a / f).read_bytes() != (b / f).read_bytes()]
    ok = same and not diff and len(files_a) > 20
    return ok, f"{len(files_a)} files over every command, {len(diff)} differ" + (f": {diff[:3]}" if diff else "")


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def check(n):
    try:
        ok, detail = CRITERIA[n]()
    except Exception as e:  # a crash is a failure, reported on the same line
        ok, detail = False, f"error: {type(e).__name__}: {e}"
    record(n, ok, detail)
    return ok, detail


@pytest.mark.parametrize("n", range(1, 5))
def test_fast_criteria(n):
    ok, detail = check(n)
    assert ok, detail


@pytest.mark.slow
@pytest.mark.parametrize("n", range(5, 11))
def test_slow_criteria(n):
    ok, detail = check(n)
    assert ok, detail


if __name__ == "__main__":
    import logging

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    logging.getLogger("kiwiqe.training").setLevel(logging.WARNING)
    chosen = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    results = [check(n)[0] for n in chosen]
    sys.exit(0 if all(results) else 1)
