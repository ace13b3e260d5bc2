import numpy as np
import pytest

from kiwiqe.ensemble import (EnsembleSpec, combine, ensemble_logits, ensemble_scores, ensemble_tags, read_logits,
                             read_scores, read_tags, search_weights, write_logits, write_scores, write_tags)
from kiwiqe.metrics import mcc, spearman

RNG = np.random.default_rng(0)


def test_ensemble_scores_examples():
    assert ensemble_scores([0.7], [1.0]) == 0.7
    assert ensemble_scores([2.0, 0.0], [0.5, 0.5]) == 1.0
    assert ensemble_scores([3.0, 9.0], [1.0, 0.0]) == 3.0
    x = RNG.normal(size=(4, 10))
    np.testing.assert_allclose(ensemble_scores(x, np.ones(4)), x.mean(axis=0), atol=1e-15)
    with pytest.raises(ValueError):
        ensemble_scores([1.0, 2.0], [0.0, 0.0])


def test_ensemble_logits_examples():
    member = RNG.normal(size=(1, 5, 2))
    _, tags = ensemble_logits(member, [1.0])
    np.testing.assert_array_equal(tags, member[0, :, 1] >= member[0, :, 0])
    combined, _ = ensemble_logits([[[2.0, -2.0]], [[0.0, 0.0]]], [0.5, 0.5])
    np.testing.assert_array_equal(combined, [[1.0, -1.0]])
    with pytest.raises(ValueError):
        ensemble_logits([[[2.0, -2.0]], [[0.0, 0.0]]], [0.0, 0.0])
    with pytest.raises(ValueError):
        ensemble_logits([[[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]], [1.0, 1.0])


def test_ensemble_tags_examples():
    assert ensemble_tags([[1], [1]], [0.3, 0.9], 1.0).tolist() == [True]
    assert ensemble_tags([[1], [0]], [0.5, 0.5], 1.0).tolist() == [True]
    assert ensemble_tags([[1], [0]], [0.3, 0.7], 2.0).tolist() == [True]
    assert ensemble_tags([[1], [0]], [0.3, 0.7], 1.0).tolist() == [False]
    assert ensemble_tags([["BAD", "OK"], ["BAD", "OK"]], [1, 1]).tolist() == [True, False]
    with pytest.raises(ValueError):
        ensemble_tags([[1, 0], [1]], [1, 1])


def test_weight_rescaling_invariance():
    for _ in range(200):
        M, n = int(RNG.integers(1, 5)), int(RNG.integers(1, 9))
        w = RNG.uniform(0.05, 1, size=M)
        c = 2.0 ** int(RNG.integers(-6, 7))
        s = RNG.normal(size=(M, n))
        np.testing.assert_allclose(ensemble_scores(s, c * w), ensemble_scores(s, w), rtol=1e-12)
        lg = RNG.normal(size=(M, n, 2))
        assert np.array_equal(ensemble_logits(lg, c * w)[1], ensemble_logits(lg, w)[1])
        tg = RNG.integers(2, size=(M, n))
        a = float(RNG.uniform(0.5, 4))
        assert np.array_equal(ensemble_tags(tg, c * w, a), ensemble_tags(tg, w, a))


def planted(n=60, lps=("a", "b")):
    gold = RNG.normal(size=n)
    lp = [lps[i % len(lps)] for i in range(n)]
    return gold, lp


def test_search_concentrates_on_perfect_member():
    gold, lps = planted()
    members = [list(gold * 2 + 1), list(RNG.normal(size=len(gold))), list(RNG.normal(size=len(gold)))]
    spec = search_weights(members, list(gold), lps, "scores", seed=1)
    for lp in ("a", "b"):
        assert spec.dev_metric[lp] == pytest.approx(1.0)
        w = spec.weights_for(lp)
        assert np.argmax(w) == 0
    combined = combine(spec, members, lps)
    assert spearman(combined, gold) == pytest.approx(1.0)


def test_budget_zero_falls_back_to_best_member():
    gold, lps = planted()
    noisy = [list(gold + RNG.normal(scale=s, size=len(gold))) for s in (0.5, 0.1, 2.0)]
    spec = search_weights(noisy, list(gold), lps, "scores", budget=0)
    assert spec.strategy == "best_only" and all(spec.fallback.values())
    for lp in ("a", "b"):
        assert spec.weights[lp] == [0.0, 1.0, 0.0]


def test_identical_members_are_deterministic():
    gold, lps = planted()
    m = list(gold + RNG.normal(size=len(gold)))
    a = search_weights([m, m, m], list(gold), lps, "scores", seed=3)
    b = search_weights([m, m, m], list(gold), lps, "scores", seed=3)
    assert a.to_dict() == b.to_dict()
    assert all(a.fallback.values())
    assert a.dev_metric["a"] == spearman(m[0::2], gold[0::2])


@pytest.mark.parametrize("strategy", ["scores", "logits", "tags"])
def test_search_never_below_best_single_member(strategy):
    for trial in range(8):
        n = int(RNG.integers(8, 20))
        lps = [("a", "b")[i % 2] for i in range(n)]
        if strategy == "scores":
            gold = list(RNG.normal(size=n))
            members = [list(np.asarray(gold) + RNG.normal(scale=1.0, size=n)) for _ in range(3)]
            metric = lambda pred, idx: spearman([pred[i] for i in idx], [gold[i] for i in idx])  # noqa: E731
        else:
            lens = RNG.integers(1, 6, size=n)
            gold = [RNG.random(k) < 0.3 for k in lens]
            if strategy == "logits":
                members = [[np.c_[np.zeros(k), g * 2.0 - 1 + RNG.normal(scale=1.5, size=k)] for k, g in zip(lens, gold)]
                           for _ in range(3)]
                tagger = lambda row: row[:, 1] >= row[:, 0]  # noqa: E731
            else:
                members = [[g ^ (RNG.random(len(g)) < 0.3) for g in gold] for _ in range(3)]
                tagger = lambda row: np.asarray(row, bool)  # noqa: E731
            metric = lambda pred, idx: mcc(np.concatenate([tagger(pred[i]) for i in idx]),  # noqa: E731
                                           np.concatenate([gold[i] for i in idx]))
        spec = search_weights(members, gold, lps, strategy, budget=32, seed=trial)
        for lp in ("a", "b"):
            idx = [i for i, l in enumerate(lps) if l == lp]
            singles = [metric(m, idx) for m in members]
            assert spec.dev_metric[lp] >= np.nanmax(singles) - 1e-12


def test_fixed_alpha_is_not_searched():
    gold = [RNG.random(4) < 0.5 for _ in range(20)]
    members = [[g ^ (RNG.random(4) < 0.2) for g in gold] for _ in range(3)]
    spec = search_weights(members, gold, ["x"] * 20, "tags", budget=16, alpha=2.0)
    assert spec.alpha == {"x": 2.0}


def test_spec_roundtrip_and_wildcard(tmp_path):
    spec = EnsembleSpec(["m0", "m1"], "tags", {"*": [0.25, 0.75]}, {"*": 2.0})
    spec.save(tmp_path / "s.json")
    back = EnsembleSpec.load(tmp_path / "s.json")
    assert back.to_dict() == spec.to_dict()
    np.testing.assert_array_equal(back.weights_for("zz"), [0.25, 0.75])
    assert back.alpha_for("zz") == 2.0
    with pytest.raises(ValueError):
        EnsembleSpec(["m0", "m1"], "scores", {"x": [0.0, 0.0]})
    with pytest.raises(ValueError):
        EnsembleSpec(["m0"], "vote")
    with pytest.raises(ValueError):
        search_weights([[0.1]], [], [], "scores")


def test_prediction_file_roundtrips(tmp_path):
    scores = list(RNG.normal(size=5))
    write_scores(tmp_path / "s.txt", scores)
    assert read_scores(tmp_path / "s.txt") == scores
    tags = [np.array([True, False]), np.array([], dtype=bool), np.array([False])]
    write_tags(tmp_path / "t.txt", tags)
    assert [t.tolist() for t in read_tags(tmp_path / "t.txt")] == [t.tolist() for t in tags]
    logits = [RNG.normal(size=(3, 2)), np.zeros((0, 2))]
    write_logits(tmp_path / "l.txt", logits)
    back = read_logits(tmp_path / "l.txt")
    assert all(np.array_equal(a, b) for a, b in zip(back, logits)) and len(back) == 2
