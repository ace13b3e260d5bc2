"""Sentence/word QE model on top of the encoder, plus the multi-task loss."""
from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import BAD, OK, QEExample, Vocab, tokenize_pair
from .encoder import EncoderConfig, EncoderTrace, encode, init_params
from .numerics import Tensor

CHECKPOINT_FORMAT = "kiwiqe-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class LossConfig:
    lambda_sent: float = 1.0
    lambda_word: float = 1.0
    class_weights: tuple = (1.0, 1.0)  # (OK, BAD)

    def __post_init__(self):
        self.class_weights = tuple(float(w) for w in self.class_weights)
        if self.lambda_sent < 0 or self.lambda_word < 0 or self.lambda_sent + self.lambda_word <= 0:
            raise ValueError("loss weights must be nonnegative with a positive sum")
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise ValueError("class_weights must be two positive numbers")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    mix: str = "scalar"  # or "head"
    transform: str = "sparsemax"
    use_lp_prefix: bool = False
    use_reference: bool = False
    max_piece: int = 4
    bad_threshold: float = 0.5

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.mix not in ("scalar", "head"):
            raise ValueError(f"mix must be 'scalar' or 'head', got {self.mix!r}")
        if self.transform not in ("softmax", "sparsemax"):
            raise ValueError(f"transform must be softmax or sparsemax, got {self.transform!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScalarMixParams:
    lam: Tensor
    phi: Tensor
    transform: str = "sparsemax"

    @property
    def beta(self) -> np.ndarray:
        return nx.simplex_map(self.phi.data, self.transform).data


@dataclass
class Prediction:
    sentence_score: float
    word_logits: np.ndarray
    word_probs: np.ndarray
    word_tags: tuple

    @property
    def bad_probs(self) -> np.ndarray:
        return self.word_probs[:, 1]


# head-level ops --------------------------------------------------------------

def scalar_mix(hidden_states, params: ScalarMixParams) -> Tensor:
    """lambda * sum_l beta_l H_l with beta = transform(phi) over L+1 layers."""
    if params.phi.shape != (len(hidden_states),):
        raise ValueError(f"phi has shape {params.phi.shape}, expected ({len(hidden_states)},)")
    beta = nx.simplex_map(params.phi, params.transform)
    stacked = nx.stack(hidden_states, axis=0)
    w = nx.reshape(beta, (-1,) + (1,) * (stacked.ndim - 1))
    return nx.tsum(stacked * w, axis=0) * params.lam


def sentence_head(h_mix: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, cls_index: int = 0) -> Tensor:
    """Two-layer tanh feed-forward on the [cls] row.  Returns shape (B,)."""
    cls = h_mix[:, cls_index] if h_mix.ndim == 3 else h_mix[cls_index][None]
    hidden = nx.tanh(nx.matmul(cls, w1) + b1)
    return nx.tsum(hidden * w2, axis=-1) + b2


def word_head(h_mix: Tensor, first_pieces, w: Tensor, b: Tensor) -> Tensor:
    """Linear OK/BAD logits on first-piece rows.

    ``first_pieces`` is an index array into a 2-D ``(T, d)`` state, or a
    ``(batch_idx, pos_idx)`` pair into a ``(B, T, d)`` one.
    """
    if isinstance(first_pieces, tuple):
        bi, pi = (np.asarray(a, dtype=np.int64) for a in first_pieces)
        if pi.size and (pi.min() < 0 or pi.max() >= h_mix.shape[1]):
            raise IndexError("first-piece index out of range")
        rows = h_mix[bi, pi]
    else:
        pi = np.asarray(first_pieces, dtype=np.int64)
        if pi.size and (pi.min() < 0 or pi.max() >= h_mix.shape[0]):
            raise IndexError("first-piece index out of range")
        rows = h_mix[pi]
    if rows.shape[0] == 0:
        return Tensor(np.zeros((0, 2)))
    return nx.matmul(rows, w) + b


def sentence_loss(y, y_hat):
    """0.5 * (y - y_hat)^2 (elementwise on tensors)."""
    if isinstance(y_hat, Tensor) or isinstance(y, Tensor):
        return nx.square(nx.sub(y, y_hat)) * 0.5
    return 0.5 * (float(y) - float(y_hat)) ** 2


def _gold_index(gold_tags) -> np.ndarray:
    arr = np.asarray(gold_tags)
    if arr.dtype.kind in "US":
        return (arr == BAD).astype(np.int64)
    return arr.astype(np.int64)


def word_loss(gold_tags, word_probs, class_weights=(1.0, 1.0)):
    """-(1/n) sum_i w[y_i] log p(y_i) from an (n, 2) probability matrix."""
    gold = _gold_index(gold_tags)
    probs = word_probs if isinstance(word_probs, Tensor) else Tensor(word_probs)
    if probs.shape != (len(gold), 2):
        raise ValueError(f"{len(gold)} gold tags but probabilities of shape {probs.shape}")
    if len(gold) == 0:
        return 0.0
    w = np.asarray(class_weights, dtype=float)[gold]
    picked = nx.log(probs[np.arange(len(gold)), gold])
    out = nx.tsum(picked * w) * (-1.0 / len(gold))
    return out if probs.requires_grad else out.item()


def combined_loss(sent_loss, w_loss, cfg: LossConfig):
    if cfg.lambda_word > 0 and w_loss is None:
        raise ValueError("word tags required when lambda_word > 0")
    if cfg.lambda_word == 0:
        return sent_loss * cfg.lambda_sent
    return sent_loss * cfg.lambda_sent + w_loss * cfg.lambda_word


def example_loss(example: QEExample, prediction: Prediction, cfg: LossConfig) -> float:
    ls = sentence_loss(example.score, prediction.sentence_score)
    lw = None
    if cfg.lambda_word > 0:
        if example.tags is None:
            raise ValueError("word tags required when lambda_word > 0")
        lw = word_loss(example.tags, prediction.word_probs, cfg.class_weights)
    return combined_loss(ls, lw, cfg)


# batching ---------------------------------------------------------------------

@dataclass
class Batch:
    ids: np.ndarray
    mask: np.ndarray
    word_batch: np.ndarray
    word_pos: np.ndarray
    word_counts: np.ndarray
    scores: np.ndarray
    gold: np.ndarray | None
    tokenized: list


def collate(examples, vocab: Vocab, config: ModelConfig) -> Batch:
    toks = [tokenize_pair(ex, vocab, config.use_lp_prefix, config.use_reference, config.max_piece)
            for ex in examples]
    T = max(len(t) for t in toks)
    ids = np.zeros((len(toks), T), dtype=np.int64)
    mask = np.zeros((len(toks), T), dtype=bool)
    wb, wp = [], []
    for b, t in enumerate(toks):
        ids[b, :len(t)] = t.token_ids
        mask[b, :len(t)] = True
        wb.extend([b] * len(t.first_pieces))
        wp.extend(t.first_pieces.tolist())
    gold = None
    if all(ex.tags is not None for ex in examples):
        gold = np.concatenate([_gold_index(ex.tags) for ex in examples]) if examples else np.zeros(0, np.int64)
    counts = np.array([len(ex.target) for ex in examples], dtype=np.int64)
    scores = np.array([ex.score for ex in examples], dtype=float)
    return Batch(ids, mask, np.array(wb, np.int64), np.array(wp, np.int64), counts, scores, gold, toks)


# model ------------------------------------------------------------------------

class QEModel:
    def __init__(self, config: ModelConfig, vocab: Vocab, params: dict | None = None):
        self.config = config
        self.vocab = vocab
        if config.encoder.vocab_size != len(vocab):
            raise ValueError(f"encoder vocab_size {config.encoder.vocab_size} != vocabulary size {len(vocab)}")
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config.encoder
        rng = np.random.default_rng(cfg.seed)
        params = init_params(cfg, rng)
        d, L, H = cfg.model_dim, cfg.num_layers, cfg.num_heads
        bound = 1.0 / math.sqrt(d)

        def u(*shape):
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        params["mix.lambda"] = Tensor(1.0, requires_grad=True)
        params["mix.phi"] = Tensor(np.zeros(L + 1), requires_grad=True)
        if self.config.mix == "head":
            params["mix.theta"] = Tensor(np.zeros((L, H)), requires_grad=True)
        params["sent.w1"] = u(d, d)
        params["sent.b1"] = Tensor(np.zeros(d), requires_grad=True)
        params["sent.w2"] = u(d)
        params["sent.b2"] = Tensor(0.0, requires_grad=True)
        params["word.w"] = u(d, 2)
        params["word.b"] = Tensor(np.zeros(2), requires_grad=True)
        return params

    @property
    def mix_params(self) -> ScalarMixParams:
        return ScalarMixParams(self.params["mix.lambda"], self.params["mix.phi"], self.config.transform)

    def encode(self, batch: Batch) -> EncoderTrace:
        return encode(batch.ids, self.params, self.config.encoder, batch.mask)

    def mix(self, trace: EncoderTrace) -> Tensor:
        if self.config.mix == "head":
            from .explain import HeadMixParams, head_mix_forward
            p = self.params
            return head_mix_forward(trace, HeadMixParams(p["mix.lambda"], p["mix.phi"], p["mix.theta"],
                                                         self.config.transform))
        return scalar_mix(trace.hidden_states, self.mix_params)

    def forward(self, batch: Batch):
        """Returns (trace, sentence scores (B,), word logits (sum n_b, 2))."""
        p = self.params
        trace = self.encode(batch)
        h_mix = self.mix(trace)
        y_hat = sentence_head(h_mix, p["sent.w1"], p["sent.b1"], p["sent.w2"], p["sent.b2"])
        logits = word_head(h_mix, (batch.word_batch, batch.word_pos), p["word.w"], p["word.b"])
        return trace, y_hat, logits

    def batch_loss(self, batch: Batch, y_hat: Tensor, logits: Tensor) -> Tensor:
        """Mean over the batch of the per-example combined loss."""
        cfg = self.config.loss
        B = len(batch.scores)
        ls = nx.tsum(sentence_loss(Tensor(batch.scores), y_hat)) * (1.0 / B)
        lw = None
        if cfg.lambda_word > 0:
            if batch.gold is None:
                raise ValueError("word tags required when lambda_word > 0")
            per_word = np.repeat(1.0 / (batch.word_counts * B), batch.word_counts)
            w = np.asarray(cfg.class_weights)[batch.gold] * per_word
            logp = nx.log_softmax(logits)[np.arange(len(batch.gold)), batch.gold]
            lw = nx.tsum(logp * w) * -1.0
        return combined_loss(ls, lw, cfg)

    def predict(self, examples, batch_size: int = 64) -> list[Prediction]:
        out = []
        tau = self.config.bad_threshold
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            batch = collate(chunk, self.vocab, self.config)
            _, y_hat, logits = self.forward(batch)
            probs = nx.softmax(logits.data).data if len(logits.data) else np.zeros((0, 2))
            offsets = np.concatenate([[0], np.cumsum(batch.word_counts)])
            for b in range(len(chunk)):
                lg = logits.data[offsets[b]:offsets[b + 1]]
                pr = probs[offsets[b]:offsets[b + 1]]
                tags = tuple(BAD if q >= tau else OK for q in pr[:, 1])
                out.append(Prediction(float(y_hat.data[b]), lg.copy(), pr.copy(), tags))
        return out

    # persistence -----------------------------------------------------------

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=float)

    def copy(self) -> "QEModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return QEModel(self.config, self.vocab, params)

    def save(self, path, extra: dict | None = None) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "vocab": self.vocab.pieces,
            "extra": extra or {},
            "params": {k: encode_array(v.data) for k, v in sorted(self.params.items())},
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "QEModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
        config = ModelConfig(**payload["config"])
        params = {k: Tensor(decode_array(v), requires_grad=True) for k, v in payload["params"].items()}
        return cls(config, Vocab(payload["vocab"]), params)


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "dtype": "float64",
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return flat.reshape(obj["shape"]).astype(np.float64)


def build_model(examples, config: ModelConfig, vocab: Vocab | None = None) -> QEModel:
    """Vocabulary from ``examples`` (unless given) and a freshly initialised model."""
    vocab = vocab or Vocab.build(examples, config.max_piece)
    enc = config.encoder
    if enc.vocab_size != len(vocab):
        config = ModelConfig(**{**config.to_dict(), "encoder": {**enc.to_dict(), "vocab_size": len(vocab)}})
    return QEModel(config, vocab)
