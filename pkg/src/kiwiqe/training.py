"""Adam training loop with dev-metric early stopping and few-shot adaptation."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .metrics import EvalReport, sentence_metrics, word_metrics
from .numerics import GradTape
from .qe_model import QEModel, collate

log = logging.getLogger(__name__)

EARLY_STOP = ("auto", "spearman", "mcc", "combined")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    early_stop: str = "auto"
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch_size and learning_rate > 0")
        if self.early_stop not in EARLY_STOP:
            raise ValueError(f"early_stop must be one of {EARLY_STOP}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            m = self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def compute_gradients(model: QEModel, batch) -> tuple[float, dict]:
    with GradTape() as tape:
        _, y_hat, logits = model.forward(batch)
        loss = model.batch_loss(batch, y_hat, logits)
    grads = tape.backward(loss)
    by_name = {k: grads[p] for k, p in model.params.items() if p in grads}
    return loss.item(), by_name


def clip_gradients(grads: dict, max_norm: float | None) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def evaluate(model: QEModel, examples, batch_size: int = 64) -> EvalReport:
    """Per-LP sentence metrics, plus word metrics where gold tags exist."""
    preds = model.predict(examples, batch_size)
    by_lp: dict = {}
    for ex, pr in zip(examples, preds):
        by_lp.setdefault(ex.lp, []).append((ex, pr))
    report = EvalReport()
    for lp, pairs in by_lp.items():
        metrics = {}
        if len(pairs) >= 2:
            metrics.update(sentence_metrics([p.sentence_score for _, p in pairs], [e.score for e, _ in pairs]))
        if all(e.tags is not None for e, _ in pairs):
            metrics.update(word_metrics([t for _, p in pairs for t in p.word_tags],
                                        [t for e, _ in pairs for t in e.tags]))
        report.per_lp[lp] = metrics
    return report


def resolve_metric(model: QEModel, name: str) -> str:
    if name != "auto":
        return name
    loss = model.config.loss
    if loss.lambda_word == 0:
        return "spearman"
    if loss.lambda_sent == 0:
        return "mcc"
    return "combined"


def select_value(report: EvalReport, metric: str) -> float:
    avg = report.average
    if metric == "combined":
        value = 0.5 * (avg.get("spearman", float("nan")) + avg.get("mcc", float("nan")))
    else:
        value = avg.get(metric, float("nan"))
    return -math.inf if math.isnan(value) else float(value)


def train(model: QEModel, train_set, dev_set, cfg: TrainConfig, history_path=None):
    """Train a copy of ``model``; return (best model by dev metric, history rows)."""
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be nonempty")
    if model.config.loss.lambda_word > 0 and any(ex.tags is None for ex in train_set):
        raise ValueError("word tags required on every training example when lambda_word > 0")
    model = model.copy()
    metric = resolve_metric(model, cfg.early_stop)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    best_state, best_value, best_epoch = model.state(), -math.inf, 0
    history = []
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = collate([train_set[i] for i in order[start:start + cfg.batch_size]], model.vocab, model.config)
            loss, grads = compute_gradients(model, batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            clip_gradients(grads, cfg.clip_norm)
            opt.step(grads)
            losses.append(loss)
        report = evaluate(model, dev_set)
        value = select_value(report, metric)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "dev": report.to_dict(),
               "metric": metric, "value": value, "seconds": round(time.perf_counter() - t0, 3)}
        history.append(row)
        log.info("epoch %d loss %.4f dev %s %.4f", epoch, row["train_loss"], metric, value)
        if value > best_value:
            best_value, best_epoch, best_state = value, epoch, model.state()
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    model.load_state(best_state)
    if history_path is not None:
        write_history(history_path, history)
    log.info("best epoch %d (%s = %.4f)", best_epoch, metric, best_value)
    return model, history


def write_history(path, history) -> None:
    # wall-clock timings are dropped so history files are reproducible
    rows = [{k: v for k, v in row.items() if k != "seconds"} for row in history]
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def finetune_fewshot(model: QEModel, adapt_set, cfg: TrainConfig, validation_set=None, guard_set=None,
                     guard_band: float = 0.02):
    """Continue training on a new LP's adaptation half.

    Returns (model, summary); the summary has before/after per-LP reports on
    the validation half and on ``guard_set`` (other LPs), and flags any guard
    LP whose chosen metric dropped by more than ``guard_band``.
    """
    if not adapt_set:
        return model, {"adapted": False}
    validation_set = validation_set or adapt_set
    metric = resolve_metric(model, cfg.early_stop)
    before = evaluate(model, validation_set)
    guard_before = evaluate(model, guard_set) if guard_set else None
    tuned, history = train(model, adapt_set, validation_set, cfg)
    after = evaluate(tuned, validation_set)
    summary = {"adapted": True, "metric": metric, "before": before.to_dict(), "after": after.to_dict(),
               "history": history}
    if guard_set:
        guard_after = evaluate(tuned, guard_set)
        key = "spearman" if metric == "combined" else metric
        drops = {lp: guard_before.per_lp[lp].get(key, 0.0) - guard_after.per_lp[lp].get(key, 0.0)
                 for lp in guard_after.per_lp}
        summary.update(guard_before=guard_before.to_dict(), guard_after=guard_after.to_dict(),
                       guard_drops=drops, guard_violations=sorted(lp for lp, d in drops.items() if d > guard_band))
    return tuned, summary


def parameter_gradients(model: QEModel, examples) -> dict:
    """Gradient of the mean combined loss over ``examples`` (one batch)."""
    return compute_gradients(model, collate(examples, model.vocab, model.config))[1]

