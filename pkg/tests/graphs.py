"""Random differentiable computation graphs over the numerics ops."""
from __future__ import annotations

import numpy as np

from kiwiqe import numerics as nx
from kiwiqe.numerics import GradTape, Tensor
from oracles import finite_difference

UNARY = ("tanh", "relu", "softmax", "sparsemax", "layer_norm", "square_scaled", "exp_scaled", "transpose2")


def _unary(name, h, rng, extra):
    if name == "tanh":
        return nx.tanh(h)
    if name == "relu":
        return nx.relu(h)
    if name == "softmax":
        return nx.softmax(h)
    if name == "sparsemax":
        return nx.sparsemax(h * 3.0)
    if name == "layer_norm":
        g, b = extra
        return nx.layer_norm(h, g, b)
    if name == "square_scaled":
        return nx.square(h) * 0.5
    if name == "exp_scaled":
        return nx.exp(nx.tanh(h))
    if name == "transpose2":
        return nx.transpose(nx.transpose(h, (1, 0)), (1, 0))
    raise ValueError(name)


def build_graph(seed: int):
    """Return (params, f) where f() evaluates the scalar loss from params' data."""
    rng = np.random.default_rng(seed)
    n, k, m = (int(v) for v in rng.integers(2, 7, size=3))
    x = Tensor(rng.normal(size=(n, k)), requires_grad=True)
    w = Tensor(rng.normal(size=(k, m)), requires_grad=True)
    g = Tensor(rng.uniform(0.5, 1.5, size=m), requires_grad=True)
    b = Tensor(rng.normal(size=m) * 0.1, requires_grad=True)
    v = Tensor(rng.normal(size=(m, 2)), requires_grad=True)
    params = [x, w, g, b, v]
    ops = [UNARY[i] for i in rng.integers(len(UNARY), size=int(rng.integers(2, 6)))]
    gold = rng.integers(2, size=n)
    target = rng.normal(size=n)
    loss_kind = ("mse", "nll", "norm", "mixed")[seed % 4]
    weights = rng.uniform(0.5, 2.0, size=n)

    def f():
        h = nx.matmul(x, w)
        for name in ops:
            h = _unary(name, h, rng, (g, b))
        logits = nx.matmul(h, v)
        if loss_kind == "mse":
            y = nx.tsum(logits, axis=-1)
            return nx.mean(nx.square(nx.sub(Tensor(target), y))) * 0.5
        if loss_kind == "nll":
            lp = nx.log_softmax(logits)[np.arange(n), gold]
            return nx.tsum(lp * weights) * (-1.0 / n)
        if loss_kind == "norm":
            return nx.tsum(nx.l2_norm_rows(logits) * weights)
        probs = nx.softmax(logits)
        word = nx.tsum(nx.log(probs[np.arange(n), gold]) * weights) * (-1.0 / n)
        sent = nx.square(nx.tsum(nx.div(logits, Tensor(2.0))) - 1.0) * 0.5
        return word + sent

    return params, f, ops


def max_relative_error(seed: int, eps: float = 1e-5) -> float:
    params, f, _ = build_graph(seed)
    with GradTape() as tape:
        loss = f()
    grads = tape.gradient(loss, params)

    def scalar():
        return f().item()

    worst = 0.0
    for p, ga in zip(params, grads):
        gf = finite_difference(scalar, p.data, eps)
        scale = max(np.abs(gf).max(), np.abs(ga).max(), 1e-8)
        worst = max(worst, float(np.abs(ga - gf).max() / scale))
    return worst
