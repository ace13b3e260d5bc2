import numpy as np
import pytest

from kiwiqe.data import BAD, OK
from kiwiqe.synthetic import NOISE_WORDS, SyntheticConfig, SyntheticCorpus, generate


def test_generation_is_deterministic():
    _, a, da = generate(50, 20, SyntheticConfig(seed=4))
    _, b, db = generate(50, 20, SyntheticConfig(seed=4))
    assert a == b and da == db
    _, c, _ = generate(50, 20, SyntheticConfig(seed=5))
    assert a != c


def test_noise_words_are_bad_and_lps_cycle():
    corpus, train, _ = generate(90, 10)
    assert [ex.lp for ex in train[:6]] == corpus.lps * 2
    for ex in train:
        assert len(ex.tags) == len(ex.target)
        for w, t in zip(ex.target, ex.tags):
            if w in NOISE_WORDS:
                assert t == BAD


def test_shards_use_disjoint_vocabulary():
    corpus = SyntheticCorpus(SyntheticConfig(num_lps=3))
    targets = [set(corpus.lexicon[lp].values()) for lp in corpus.lps]
    sources = [set(corpus.source_words[lp]) for lp in corpus.lps]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not targets[i] & targets[j] and not sources[i] & sources[j]


def test_clean_example_score_is_planted_mean_quality():
    cfg = SyntheticConfig(p_noise=0.0, p_swap=0.0, score_noise=0.0)
    corpus = SyntheticCorpus(cfg)
    for ex in corpus.sample(20, 1):
        assert set(ex.tags) == {OK}
        assert ex.score == pytest.approx(np.mean([corpus.quality[w] for w in ex.target]))
        assert sorted(ex.target) == sorted(corpus.lexicon[ex.lp][w] for w in ex.source)


def test_errors_lower_the_score():
    cfg = SyntheticConfig(score_noise=0.0)
    corpus = SyntheticCorpus(cfg)
    exs = corpus.sample(400, 2)
    clean = [ex.score for ex in exs if BAD not in ex.tags]
    dirty = [ex.score for ex in exs if ex.tags.count(BAD) >= 2]
    assert np.mean(dirty) < np.mean(clean) - 0.3


def test_lp_subset():
    corpus = SyntheticCorpus()
    assert {ex.lp for ex in corpus.sample(10, 0, [corpus.lps[2]])} == {corpus.lps[2]}
