"""Planted-signal QE corpora for desk-scale experiments.

Each synthetic "language pair" owns a shard of source words, target words and
a one-to-one lexicon between them.  A clean translation maps every source word
through the lexicon (the order is shuffled, so alignment has to be found by
content).  Errors are planted two ways:

* noise pieces: reserved tokens shared by all shards, always BAD;
* mistranslations: a target word swapped for an unrelated one, BAD.

The sentence score is a planted linear function of the target bag of pieces
(per-word quality weights, a fixed negative weight on noise pieces) minus a
penalty per mistranslated word, so sentence and word supervision share signal.
"""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .data import BAD, OK, QEExample

NOISE_WORDS = ("qqz", "zqx", "xxq", "qzz")


@dataclass
class SyntheticConfig:
    num_lps: int = 3
    words_per_lp: int = 24
    min_len: int = 4
    max_len: int = 7
    p_noise: float = 0.12
    p_swap: float = 0.08
    noise_weight: float = -1.0
    swap_penalty: float = 1.0
    score_noise: float = 0.02
    seed: int = 0


def _word(rng, prefix: str, taken: set) -> str:
    while True:
        w = prefix + "".join(rng.choice(list(string.ascii_lowercase[:20]), size=2))
        if w not in taken:
            taken.add(w)
            return w


class SyntheticCorpus:
    """Generator with a frozen planted world; ``sample`` draws examples from it."""

    def __init__(self, config: SyntheticConfig | None = None):
        self.config = cfg = config or SyntheticConfig()
        rng = np.random.default_rng(cfg.seed)
        taken: set = set(NOISE_WORDS)
        self.lps = [f"s{k}-t{k}" for k in range(cfg.num_lps)]
        self.source_words, self.lexicon, self.quality = {}, {}, {}
        for k, lp in enumerate(self.lps):
            src = [_word(rng, "s", taken) for _ in range(cfg.words_per_lp)]
            tgt = [_word(rng, "t", taken) for _ in range(cfg.words_per_lp)]
            self.source_words[lp] = src
            self.lexicon[lp] = dict(zip(src, tgt))
            for w in tgt:
                self.quality[w] = float(rng.uniform(0.0, 1.0))
        for w in NOISE_WORDS:
            self.quality[w] = cfg.noise_weight

    def score(self, target, swapped) -> float:
        n = len(target)
        return float(np.mean([self.quality[w] for w in target]) - self.config.swap_penalty * sum(swapped) / n)

    def example(self, lp: str, rng: np.random.Generator) -> QEExample:
        cfg = self.config
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        src_vocab = self.source_words[lp]
        src = [src_vocab[i] for i in rng.choice(len(src_vocab), size=n, replace=False)]
        tgt = [self.lexicon[lp][w] for w in src]
        tgt = [tgt[i] for i in rng.permutation(n)]
        tgt_vocab = list(self.lexicon[lp].values())
        tags, swapped = [], []
        for i in range(n):
            u = rng.random()
            if u < cfg.p_noise:
                tgt[i] = NOISE_WORDS[rng.integers(len(NOISE_WORDS))]
                tags.append(BAD)
                swapped.append(False)
            elif u < cfg.p_noise + cfg.p_swap:
                in_src = set(tgt) | {self.lexicon[lp][w] for w in src}
                choices = [w for w in tgt_vocab if w not in in_src]
                tgt[i] = choices[rng.integers(len(choices))]
                tags.append(BAD)
                swapped.append(True)
            else:
                tags.append(OK)
                swapped.append(False)
        score = self.score(tgt, swapped) + cfg.score_noise * rng.standard_normal()
        return QEExample(lp, tuple(src), tuple(tgt), score, tuple(tags))

    def sample(self, n: int, seed: int, lps=None) -> list[QEExample]:
        """``n`` examples cycling over ``lps`` (default: all language pairs)."""
        rng = np.random.default_rng(seed)
        lps = list(lps or self.lps)
        return [self.example(lps[i % len(lps)], rng) for i in range(n)]


def generate(n_train: int = 2000, n_dev: int = 500, config: SyntheticConfig | None = None,
             lps=None, seed: int | None = None):
    corpus = SyntheticCorpus(config)
    base = corpus.config.seed if seed is None else seed
    return corpus, corpus.sample(n_train, base * 7919 + 1, lps), corpus.sample(n_dev, base * 7919 + 2, lps)
