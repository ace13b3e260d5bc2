"""Attention-based word-level explainers, head mix and head selection."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import TokenizedInput
from .encoder import EncoderTrace
from .metrics import explanation_scores
from .numerics import GradTape, Tensor

METHODS = ("attn_norm", "attn_gradnorm")


@dataclass
class Explanation:
    token_scores: np.ndarray
    word_scores: np.ndarray
    provenance: object = None


@dataclass
class HeadMixParams:
    lam: Tensor
    phi: Tensor
    theta: Tensor
    transform: str = "sparsemax"

    @property
    def beta(self) -> np.ndarray:
        return nx.simplex_map(self.phi.data, self.transform).data

    @property
    def gamma(self) -> np.ndarray:
        return nx.simplex_map(self.theta.data, self.transform).data


def head_mix_forward(trace: EncoderTrace, params: HeadMixParams) -> Tensor:
    """lambda * (beta_0 H_0 + sum_{l>=1} beta_l sum_h gamma_{l,h} h_{l,h}).

    The embedding layer has no heads, so it enters with its own beta weight.
    """
    L, H = trace.num_layers, trace.num_heads
    if params.phi.shape != (L + 1,) or params.theta.shape != (L, H):
        raise ValueError(f"head mix expects phi ({L + 1},) and theta ({L}, {H}); "
                         f"got {params.phi.shape} and {params.theta.shape}")
    beta = nx.simplex_map(params.phi, params.transform)
    gamma = nx.simplex_map(params.theta, params.transform)
    weights = gamma * nx.reshape(beta[1:], (L, 1))
    heads = nx.stack(trace.head_outputs, axis=0)  # (L, B, H, T, d)
    mixed = nx.tsum(heads * nx.reshape(weights, (L, 1, H, 1, 1)), axis=(0, 2))
    return (mixed + trace.hidden_states[0] * beta[0]) * params.lam


def aggregate_subwords(token_scores, piece_to_word, n_words: int | None = None) -> np.ndarray:
    """Word score = sum of the scores of its pieces."""
    token_scores = np.asarray(token_scores, dtype=float)
    piece_to_word = np.asarray(piece_to_word, dtype=np.int64)
    if piece_to_word.shape != token_scores.shape:
        raise ValueError("every target piece needs a word index")
    if n_words is None:
        n_words = int(piece_to_word.max()) + 1 if piece_to_word.size else 0
    if piece_to_word.size and (piece_to_word.min() < 0 or piece_to_word.max() >= n_words):
        raise ValueError("piece mapped outside the target words")
    out = np.zeros(n_words)
    np.add.at(out, piece_to_word, token_scores)
    covered = np.zeros(n_words, dtype=bool)
    covered[piece_to_word] = True
    if not covered.all():
        raise ValueError(f"target words without pieces: {np.flatnonzero(~covered).tolist()}")
    return out


def relevance(attn: np.ndarray, norms: np.ndarray, query_mask: np.ndarray | None = None,
              query: str = "mean") -> np.ndarray:
    """Key relevance ``agg_i A[i, j] * norms[j]`` over the last two axes.

    ``query='mean'`` averages over the (unmasked) query rows, ``'cls'`` uses row 0.
    """
    if query == "cls":
        col = attn[..., 0, :]
    elif query == "mean":
        if query_mask is None:
            col = attn.mean(axis=-2)
        else:
            qm = query_mask.astype(float)
            col = np.einsum("...ij,...i->...j", attn, qm) / qm.sum(axis=-1, keepdims=True)
    else:
        raise ValueError(f"unknown query aggregation {query!r}")
    return col * norms


def _target_view(tok: TokenizedInput):
    start, end = tok.target_span
    return start, end, np.array([tok.piece_word[p] for p in range(start, end)], dtype=np.int64)


def _explanation(rel_row: np.ndarray, tok: TokenizedInput, provenance) -> Explanation:
    start, end, p2w = _target_view(tok)
    token_scores = rel_row[start:end].copy()
    return Explanation(token_scores, aggregate_subwords(token_scores, p2w, len(tok.first_pieces)), provenance)


def _check_head(trace: EncoderTrace, layer: int, head: int) -> None:
    if not (1 <= layer <= trace.num_layers and 0 <= head < trace.num_heads):
        raise IndexError(f"head ({layer}, {head}) outside trace with L={trace.num_layers}, H={trace.num_heads}")


def attn_norm_explain(trace: EncoderTrace, layer: int, head: int, tok: TokenizedInput, b: int = 0,
                      query: str = "mean") -> Explanation:
    """Attention weights scaled by value-vector norms, restricted to the target."""
    _check_head(trace, layer, head)
    A = trace.attentions[layer - 1].data[b, head]
    norms = np.linalg.norm(trace.values[layer - 1].data[b, head], axis=-1)
    rel = relevance(A, norms, trace.mask[b], query)
    return _explanation(rel, tok, (layer, head))


def attn_gradnorm_explain(trace: EncoderTrace, layer: int, head: int, tok: TokenizedInput, b: int = 0,
                          query: str = "mean") -> Explanation:
    """Attention weights scaled by the norms of d(y_hat)/dV."""
    _check_head(trace, layer, head)
    grad = trace.values[layer - 1].grad
    if grad is None:
        raise ValueError("trace has no value gradients; run value_gradients first")
    A = trace.attentions[layer - 1].data[b, head]
    norms = np.linalg.norm(grad[b, head], axis=-1)
    rel = relevance(A, norms, trace.mask[b], query)
    return _explanation(rel, tok, (layer, head))


def value_gradients(model, batch):
    """Forward with a private tape and fill ``values[l].grad`` with d(y_hat)/dV.

    Sentences in a batch do not interact, so one backward pass of sum(y_hat)
    yields every sentence's own gradient.
    """
    with GradTape() as tape:
        trace, y_hat, _ = model.forward(batch)
        total = nx.tsum(y_hat)
    tape.backward(total)
    return trace, y_hat.data.copy()


def all_head_relevance(trace: EncoderTrace, method: str, query: str = "mean") -> np.ndarray:
    """Relevance for every head at once: array (L, B, H, T)."""
    if method not in METHODS:
        raise ValueError(f"unknown explainer {method!r}")
    out = []
    for a, v in zip(trace.attentions, trace.values):
        if method == "attn_norm":
            norms = np.linalg.norm(v.data, axis=-1)
        else:
            if v.grad is None:
                raise ValueError("trace has no value gradients")
            norms = np.linalg.norm(v.grad, axis=-1)
        out.append(relevance(a.data, norms, trace.mask[:, None, :], query))
    return np.stack(out)


def explain_examples(model, examples, method: str = "attn_gradnorm", heads=None, batch_size: int = 64,
                     query: str = "mean") -> list[dict]:
    """Per-example ``{(layer, head): Explanation}`` for the requested heads (default all)."""
    from .qe_model import collate

    L, H = model.config.encoder.num_layers, model.config.encoder.num_heads
    heads = [tuple(h) for h in heads] if heads is not None else [(l, h) for l in range(1, L + 1) for h in range(H)]
    results = []
    for start in range(0, len(examples), batch_size):
        batch = collate(examples[start:start + batch_size], model.vocab, model.config)
        if method == "attn_gradnorm":
            trace, _ = value_gradients(model, batch)
        else:
            trace, _, _ = model.forward(batch)
        rel = all_head_relevance(trace, method, query)
        for b, tok in enumerate(batch.tokenized):
            results.append({(l, h): _explanation(rel[l - 1, b, h], tok, (l, h)) for l, h in heads})
    return results


def minmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def ensemble_explanations(explanations) -> Explanation:
    """Per-token mean of min-max normalised member scores.

    Member values are sorted per token before summing so the result does not
    depend on member order.
    """
    explanations = list(explanations)
    if not explanations:
        raise ValueError("no explanations to ensemble")
    n_tok, n_word = len(explanations[0].token_scores), len(explanations[0].word_scores)
    if any(len(e.token_scores) != n_tok or len(e.word_scores) != n_word for e in explanations):
        raise ValueError("explanations cover different tokens")
    k = len(explanations)

    def avg(rows):
        return np.sort(np.stack(rows), axis=0).sum(axis=0) / k if n_tok or n_word else np.zeros(0)

    tok = avg([minmax(e.token_scores) for e in explanations]) if n_tok else np.zeros(0)
    word = avg([minmax(e.word_scores) for e in explanations]) if n_word else np.zeros(0)
    return Explanation(tok, word, {"members": sorted((e.provenance for e in explanations), key=repr)})


def rank_heads(model, dev_set, method: str = "attn_gradnorm", query: str = "mean", batch_size: int = 64):
    """Score every (layer, head) by mean(AUC, AP, R@K) on dev sentences with errors.

    Returns ``[(layer, head, score), ...]`` best first; ties by (layer, head).
    """
    dev = [ex for ex in dev_set if ex.tags is not None and "BAD" in ex.tags]
    if not dev:
        raise ValueError("dev set has no sentences with BAD tags")
    per_example = explain_examples(model, dev, method, batch_size=batch_size, query=query)
    gold = [ex.tags for ex in dev]
    ranked = []
    for key in per_example[0]:
        scores = [minmax(ex_expl[key].word_scores) for ex_expl in per_example]
        ranked.append((key[0], key[1], explanation_scores(scores, gold)["mean"]))
    ranked.sort(key=lambda r: (-r[2], r[0], r[1]))
    return ranked


def top_heads(ranking, k: int = 5) -> list[tuple]:
    return [(l, h) for l, h, _ in ranking[:k]]


def head_mix_ranking(model) -> list[tuple]:
    """Heads ordered by their learned head-mix mass beta_l * gamma_{l,h}."""
    p = model.params
    if "mix.theta" not in p:
        raise ValueError("model was not trained with head mix")
    hp = HeadMixParams(p["mix.lambda"], p["mix.phi"], p["mix.theta"], model.config.transform)
    mass = hp.gamma * hp.beta[1:, None]
    rows = [(l + 1, h, float(mass[l, h])) for l in range(mass.shape[0]) for h in range(mass.shape[1])]
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows


def ensemble_for_examples(model, examples, heads, method: str = "attn_gradnorm",
                          query: str = "mean") -> list[Explanation]:
    per_example = explain_examples(model, examples, method, heads=heads, query=query)
    return [ensemble_explanations([ex[tuple(h)] for h in heads]) for ex in per_example]


def select_heads_zero_shot(per_lp_ensembles: dict, k: int = 5, dev_scores: dict | None = None) -> list[tuple]:
    """Most frequent heads across the per-LP ensembles.

    Frequency ties fall back to the mean dev score (from ``dev_scores`` or from
    ``(layer, head, score)`` entries) and then to (layer, head) order.
    """
    if not per_lp_ensembles:
        raise ValueError("no per-LP ensembles given")
    counts: Counter = Counter()
    scores: dict = {}
    for members in per_lp_ensembles.values():
        for m in members:
            key = (int(m[0]), int(m[1]))
            counts[key] += 1
            if len(m) > 2:
                scores.setdefault(key, []).append(float(m[2]))
    if dev_scores:
        for key, val in dev_scores.items():
            scores.setdefault(tuple(key), []).append(float(val))
    mean_score = {key: float(np.mean(v)) for key, v in scores.items()}
    order = sorted(counts, key=lambda key: (-counts[key], -mean_score.get(key, 0.0), key))
    return order[:k]


def write_explanations(path, explanations) -> None:
    lines = [" ".join(f"{s:.6f}" for s in e.word_scores) for e in explanations]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_explanations(path) -> list[np.ndarray]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    return [np.array([float(t) for t in line.split()]) for line in text]


@dataclass
class EnsembleDescriptor:
    method: str
    members: list = field(default_factory=list)
    query: str = "mean"

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"method": self.method, "query": self.query,
                                          "members": [list(m) for m in self.members]}, indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EnsembleDescriptor":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["method"], [tuple(m) for m in obj["members"]], obj.get("query", "mean"))
