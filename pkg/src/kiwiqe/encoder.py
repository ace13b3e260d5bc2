"""Toy transformer encoder that exposes every intermediate the QE heads need."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class EncoderConfig:
    num_layers: int = 4
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    vocab_size: int = 512
    max_positions: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("num_layers and num_heads must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderTrace:
    """Per-layer tensors from one forward pass over a padded batch.

    ``hidden_states[l]`` is ``(B, T, d)`` with ``l = 0`` the embeddings.
    ``attentions``, ``values`` and ``head_outputs`` have one entry per
    transformer layer (``l = 1..L`` stored at list index ``l - 1``) shaped
    ``(B, H, T, T)``, ``(B, H, T, d/H)`` and ``(B, H, T, d)``.
    """

    hidden_states: list
    attentions: list
    values: list
    head_outputs: list
    mask: np.ndarray
    attn_outputs: list = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.attentions)

    @property
    def num_heads(self) -> int:
        return self.attentions[0].shape[1]

    def attention(self, layer: int, head: int, b: int = 0) -> np.ndarray:
        return self.attentions[layer - 1].data[b, head]

    def value(self, layer: int, head: int, b: int = 0) -> np.ndarray:
        return self.values[layer - 1].data[b, head]


def attention_head(Q, K, V, mask: np.ndarray | None = None):
    """Scaled dot-product attention for one head (leading batch axes allowed).

    Returns ``(output, weights)`` with ``weights = softmax(Q K^T / sqrt(d'))``.
    """
    Q, K, V = (x if isinstance(x, Tensor) else Tensor(x) for x in (Q, K, V))
    dq = Q.shape[-1]
    if dq == 0 or K.shape[-1] != dq or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"attention dims disagree: Q{Q.shape} K{K.shape} V{V.shape}")
    scores = nx.matmul(Q, nx.swapaxes(K, -1, -2)) * (1.0 / math.sqrt(dq))
    weights = nx.softmax(scores, mask)
    return nx.matmul(weights, V), weights


def init_params(config: EncoderConfig, rng: np.random.Generator | None = None) -> dict:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    d, f = config.model_dim, config.ffn_dim
    bound = 1.0 / math.sqrt(d)

    def u(*shape):
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    params = {
        "embed.tokens": u(config.vocab_size, d),
        "embed.positions": u(config.max_positions, d),
    }
    for layer in range(1, config.num_layers + 1):
        p = f"layer{layer}."
        params[p + "ln1.gain"] = Tensor(np.ones(d), requires_grad=True)
        params[p + "ln1.bias"] = Tensor(np.zeros(d), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            params[p + name] = u(d, d)
        params[p + "ln2.gain"] = Tensor(np.ones(d), requires_grad=True)
        params[p + "ln2.bias"] = Tensor(np.zeros(d), requires_grad=True)
        params[p + "ffn.w1"] = u(d, f)
        params[p + "ffn.b1"] = Tensor(np.zeros(f), requires_grad=True)
        params[p + "ffn.w2"] = u(f, d)
        params[p + "ffn.b2"] = Tensor(np.zeros(d), requires_grad=True)
    return params


def encode(token_ids, params: dict, config: EncoderConfig, mask: np.ndarray | None = None) -> EncoderTrace:
    """Run the encoder on a ``(B, T)`` (or ``(T,)``) array of token ids."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, T = ids.shape
    if T > config.max_positions:
        raise ValueError(f"sequence length {T} exceeds max_positions {config.max_positions}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError(f"token id out of vocabulary range [0, {config.vocab_size})")
    if mask is None:
        mask = np.ones((B, T), dtype=bool)
    H, dh, d = config.num_heads, config.head_dim, config.model_dim
    key_mask = mask[:, None, None, :]

    x = params["embed.tokens"][ids] + params["embed.positions"][np.arange(T)]
    hidden, attns, values, heads, outs = [x], [], [], [], []
    for layer in range(1, config.num_layers + 1):
        p = f"layer{layer}."
        xn = nx.layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])

        def split(w):
            return nx.transpose(nx.reshape(nx.matmul(xn, w), (B, T, H, dh)), (0, 2, 1, 3))

        q, k, v = split(params[p + "wq"]), split(params[p + "wk"]), split(params[p + "wv"])
        ctx, a = attention_head(q, k, v, key_mask)
        wo = nx.reshape(params[p + "wo"], (H, dh, d))
        per_head = nx.matmul(ctx, wo)
        attn_out = nx.tsum(per_head, axis=1)
        x = x + attn_out
        xn2 = nx.layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        ff = nx.relu(nx.matmul(xn2, params[p + "ffn.w1"]) + params[p + "ffn.b1"])
        x = x + nx.matmul(ff, params[p + "ffn.w2"]) + params[p + "ffn.b2"]
        hidden.append(x)
        attns.append(a)
        values.append(v)
        heads.append(per_head)
        outs.append(attn_out)
    return EncoderTrace(hidden, attns, values, heads, mask, outs)
