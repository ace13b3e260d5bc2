"""``kiwiqe`` command line: one binary, one subcommand per pipeline stage.

Settings come from built-in defaults, then an optional ``--config`` JSON file,
then command-line flags (flags win).  Exit codes: 0 ok, 1 runtime failure,
2 usage or configuration error.
"""
from __future__ import annotations

import os

_threads = os.environ.get("KIWIQE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

CONFIG_SCHEMA_VERSION = 1
SCHEMAS = ("da", "hter", "mqm", "tags")

log = logging.getLogger("kiwiqe")


class UsageError(Exception):
    pass


ENCODER_DEFAULTS = {"layers": 4, "heads": 4, "dim": 64, "ffn_dim": 128, "max_positions": 64}
MODEL_DEFAULTS = {"lambda_s": 1.0, "lambda_w": 1.0, "class_weights": [1.0, 1.0], "mix": "scalar",
                  "transform": "sparsemax", "lp_prefix": False, "bad_threshold": 0.5, "max_piece": 4}
TRAIN_DEFAULTS = {"epochs": 50, "batch_size": 32, "lr": 2e-3, "patience": None, "early_stop": "auto",
                  "clip_norm": 1.0, "seed": 0}

DEFAULTS = {
    "gen-synthetic": {"out_dir": None, "n_train": 2000, "n_dev": 500, "n_test": 500, "num_lps": 3,
                      "words_per_lp": 24, "seed": 0, "lps": None},
    "train": {"train": None, "dev": None, "out_dir": None, "schema": "tags", "vocab": None,
              "vocab_data": [], **ENCODER_DEFAULTS, **MODEL_DEFAULTS, **TRAIN_DEFAULTS},
    "finetune": {"checkpoint": None, "data": None, "out_dir": None, "schema": "tags", "split_seed": 0,
                 "guard": None, "guard_band": 0.02, **TRAIN_DEFAULTS, "epochs": 10, "lr": 5e-4},
    "predict": {"checkpoint": None, "data": None, "out_dir": None, "schema": "da", "batch_size": 64},
    "rank-heads": {"checkpoint": None, "dev": None, "out": None, "method": "attn_gradnorm",
                   "schema": "tags", "query": "mean"},
    "explain": {"checkpoint": None, "data": None, "out_dir": None, "method": "attn_gradnorm",
                "heads": "top5", "ranking": None, "dev": None, "schema": "da", "query": "mean"},
    "ensemble": {"members": [], "data": None, "out_dir": None, "strategy": "scores", "schema": "da",
                 "spec": None, "alpha": None, "budget": 128, "sweeps": 2, "seed": 0},
    "evaluate": {"predictions": None, "gold": None, "out_dir": None, "schema": "da",
                 "explanations": None, "ced": False, "micro_recall": False},
}

INPUT_PATHS = ("train", "dev", "vocab", "checkpoint", "data", "ranking", "spec", "predictions", "gold",
               "explanations", "guard")
INPUT_PATH_LISTS = ("members", "vocab_data")


# argument parsing ---------------------------------------------------------------

def _add(p, *names, **kw):
    kw.setdefault("default", argparse.SUPPRESS)
    p.add_argument(*names, **kw)


def _bool(p, name, help):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                   default=argparse.SUPPRESS, help=help)


def _encoder_flags(p):
    g = p.add_argument_group("encoder")
    _add(g, "--layers", type=int, help="transformer blocks L (default 4)")
    _add(g, "--heads", type=int, help="attention heads H (default 4)")
    _add(g, "--dim", type=int, help="model width d, divisible by H (default 64)")
    _add(g, "--ffn-dim", dest="ffn_dim", type=int, help="feed-forward width (default 128)")
    _add(g, "--max-positions", dest="max_positions", type=int, help="longest input in pieces (default 64)")


def _model_flags(p):
    g = p.add_argument_group("model and loss")
    _add(g, "--lambda-s", dest="lambda_s", type=float, help="sentence loss weight (default 1)")
    _add(g, "--lambda-w", dest="lambda_w", type=float, help="word loss weight; 0 = sentence-only (default 1)")
    _add(g, "--class-weights", dest="class_weights", type=float, nargs=2, metavar=("OK", "BAD"),
         help="word loss class weights (default 1 1)")
    _add(g, "--mix", choices=("scalar", "head"), help="layer mix: scalar mix or head mix (default scalar)")
    _add(g, "--transform", choices=("softmax", "sparsemax"), help="mix weight transform (default sparsemax)")
    _bool(g, "lp-prefix", "prepend a language-pair token to target and source")
    _add(g, "--bad-threshold", dest="bad_threshold", type=float, help="tag BAD when p(BAD) >= this (default 0.5)")
    _add(g, "--max-piece", dest="max_piece", type=int, help="characters per word piece (default 4)")


def _train_flags(p):
    g = p.add_argument_group("optimisation")
    _add(g, "--epochs", type=int, help="maximum epochs")
    _add(g, "--batch-size", dest="batch_size", type=int, help="examples per batch (default 32)")
    _add(g, "--lr", type=float, help="Adam learning rate")
    _add(g, "--patience", type=int, help="stop after this many epochs without dev improvement")
    _add(g, "--early-stop", dest="early_stop", choices=("auto", "spearman", "mcc", "combined"),
         help="dev metric for checkpoint selection (default auto)")
    _add(g, "--clip-norm", dest="clip_norm", type=float, help="global gradient norm clip (default 1)")
    _add(g, "--seed", type=int, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kiwiqe", description="Desk-scale MT quality estimation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def cmd(name, help):
        p = sub.add_parser(name, help=help, description=help)
        _add(p, "--config", help="JSON file with settings for this command (flags override it)")
        return p

    p = cmd("gen-synthetic", "write a planted-signal synthetic corpus (train/dev/test TSV)")
    _add(p, "--out-dir", dest="out_dir", help="output directory")
    _add(p, "--n-train", dest="n_train", type=int, help="training examples (default 2000)")
    _add(p, "--n-dev", dest="n_dev", type=int, help="dev examples (default 500)")
    _add(p, "--n-test", dest="n_test", type=int, help="test examples (default 500)")
    _add(p, "--num-lps", dest="num_lps", type=int, help="synthetic language pairs (default 3)")
    _add(p, "--words-per-lp", dest="words_per_lp", type=int, help="lexicon size per language pair (default 24)")
    _add(p, "--lps", nargs="+", help="only sample these language pairs")
    _add(p, "--seed", type=int, help="world and sampling seed (default 0)")

    p = cmd("train", "train a QE model")
    _add(p, "--train", help="training TSV")
    _add(p, "--dev", help="dev TSV for early stopping")
    _add(p, "--out-dir", dest="out_dir", help="writes checkpoint.json, history.jsonl, vocab.txt")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema (default tags)")
    _add(p, "--vocab", help="existing vocabulary file (one piece per line)")
    _add(p, "--vocab-data", dest="vocab_data", nargs="+", help="extra TSVs whose pieces join the vocabulary")
    _encoder_flags(p)
    _model_flags(p)
    _train_flags(p)

    p = cmd("finetune", "few-shot adaptation: split data in halves, tune on one, validate on the other")
    _add(p, "--checkpoint", help="starting checkpoint")
    _add(p, "--data", help="new language-pair TSV")
    _add(p, "--out-dir", dest="out_dir", help="writes checkpoint.json, history.jsonl, summary.json")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema (default tags)")
    _add(p, "--split-seed", dest="split_seed", type=int, help="seed of the half split (default 0)")
    _add(p, "--guard", help="TSV of other language pairs to check for degradation")
    _add(p, "--guard-band", dest="guard_band", type=float, help="allowed drop on guard LPs (default 0.02)")
    _train_flags(p)

    p = cmd("predict", "predict sentence scores and word tags")
    _add(p, "--checkpoint", help="model checkpoint")
    _add(p, "--data", help="input TSV")
    _add(p, "--out-dir", dest="out_dir",
         help="writes sentence_scores.txt, word_tags.txt, word_logits.txt, word_probs.txt")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema (default da)")
    _add(p, "--batch-size", dest="batch_size", type=int, help="inference batch size (default 64)")

    p = cmd("rank-heads", "score every attention head as an explainer on a tagged dev set")
    _add(p, "--checkpoint", help="model checkpoint")
    _add(p, "--dev", help="dev TSV with word tags")
    _add(p, "--out", help="ranking JSON")
    _add(p, "--method", choices=("attn_norm", "attn_gradnorm"), help="explainer (default attn_gradnorm)")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema (default tags)")
    _add(p, "--query", choices=("mean", "cls"), help="query-row aggregation (default mean)")

    p = cmd("explain", "write word-level explanations")
    _add(p, "--checkpoint", help="model checkpoint")
    _add(p, "--data", help="input TSV")
    _add(p, "--out-dir", dest="out_dir", help="writes explanations.txt and ensemble.json")
    _add(p, "--method", choices=("attn_norm", "attn_gradnorm"), help="explainer (default attn_gradnorm)")
    _add(p, "--heads", help="'top5' (needs --ranking or --dev), 'all', or 'L:H,L:H,...'")
    _add(p, "--ranking", help="ranking JSON from rank-heads")
    _add(p, "--dev", help="tagged dev TSV to rank heads on the fly")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema of --data (default da)")
    _add(p, "--query", choices=("mean", "cls"), help="query-row aggregation (default mean)")

    p = cmd("ensemble", "search per-LP ensemble weights and combine member predictions")
    _add(p, "--members", nargs="+", help="member prediction directories (from predict)")
    _add(p, "--data", help="TSV aligned with the predictions (language pairs, gold for the search)")
    _add(p, "--out-dir", dest="out_dir", help="writes ensemble_spec.json and combined predictions")
    _add(p, "--strategy", choices=("scores", "logits", "tags"), help="what to combine (default scores)")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema (default da)")
    _add(p, "--spec", help="apply this ensemble spec instead of searching")
    _add(p, "--alpha", type=float, help="fix the BAD-class weight for the tags strategy")
    _add(p, "--budget", type=int, help="random-search samples per LP (default 128; 0 = best member)")
    _add(p, "--sweeps", type=int, help="coordinate refinement sweeps (default 2)")
    _add(p, "--seed", type=int, help="search seed (default 0)")

    p = cmd("evaluate", "score predictions (and explanations) against gold")
    _add(p, "--predictions", help="prediction directory (from predict or ensemble)")
    _add(p, "--gold", help="gold TSV")
    _add(p, "--out-dir", dest="out_dir", help="writes report.json and report.tsv")
    _add(p, "--schema", choices=SCHEMAS, help="TSV schema (default da)")
    _add(p, "--explanations", help="explanations.txt to score with AUC/AP/R@K")
    _bool(p, "ced", "critical-error mode: gold score is 1 for a critical error; report best-threshold MCC")
    _bool(p, "micro-recall", "pool R@K hits over sentences instead of averaging")
    return parser


def resolve_settings(command: str, args: dict) -> dict:
    settings = dict(DEFAULTS[command])
    config_path = args.pop("config", None)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}: invalid JSON: {err}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        version = cfg.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise UsageError(f"{path}: unsupported schema_version {version}")
        cfg.pop("command", None)
        unknown = sorted(set(cfg) - set(settings))
        if unknown:
            raise UsageError(f"{path}: unknown keys for '{command}': {', '.join(unknown)}")
        settings.update(cfg)
    settings.update(args)
    return settings


def validate_paths(settings: dict, required: tuple) -> None:
    for key in required:
        if settings.get(key) in (None, [], ""):
            raise UsageError(f"missing required setting --{key.replace('_', '-')}")
    missing = [f"{key} {value}" for key in INPUT_PATHS
               if (value := settings.get(key)) and not Path(value).exists()]
    missing += [f"{key} {value}" for key in INPUT_PATH_LISTS
                for value in settings.get(key) or [] if not Path(value).exists()]
    if missing:
        raise UsageError("file not found: " + "; ".join(missing))


# commands -------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen_synthetic(s: dict) -> None:
    from .data import write_qe_tsv
    from .synthetic import SyntheticConfig, SyntheticCorpus

    validate_paths(s, ("out_dir",))
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    corpus = SyntheticCorpus(SyntheticConfig(num_lps=s["num_lps"], words_per_lp=s["words_per_lp"], seed=s["seed"]))
    lps = s["lps"]
    if lps and any(lp not in corpus.lps for lp in lps):
        raise UsageError(f"--lps must be among {corpus.lps}")
    base = s["seed"] * 7919
    write_qe_tsv(out / "train.tsv", corpus.sample(s["n_train"], base + 1, lps))
    write_qe_tsv(out / "dev.tsv", corpus.sample(s["n_dev"], base + 2, lps))
    write_qe_tsv(out / "test.tsv", corpus.sample(s["n_test"], base + 3, lps))
    _write_json(out / "world.json", {"lps": corpus.lps, "seed": s["seed"], "num_lps": s["num_lps"],
                                     "words_per_lp": s["words_per_lp"]})
    print(f"wrote synthetic corpus to {out}")


def _train_config(s: dict):
    from .training import TrainConfig
    return TrainConfig(epochs=s["epochs"], batch_size=s["batch_size"], learning_rate=s["lr"],
                       clip_norm=s["clip_norm"], early_stop=s["early_stop"], patience=s["patience"],
                       seed=s["seed"])


def cmd_train(s: dict) -> None:
    from .data import Vocab, parse_qe_tsv
    from .encoder import EncoderConfig
    from .qe_model import LossConfig, ModelConfig, QEModel
    from .training import train

    validate_paths(s, ("train", "dev", "out_dir"))
    train_set = parse_qe_tsv(s["train"], s["schema"])
    dev_set = parse_qe_tsv(s["dev"], s["schema"])
    if s["vocab"]:
        vocab = Vocab.load(s["vocab"])
    else:
        extra = [ex for path in s["vocab_data"] for ex in parse_qe_tsv(path, s["schema"])]
        vocab = Vocab.build(train_set + extra, s["max_piece"])
    enc = EncoderConfig(num_layers=s["layers"], num_heads=s["heads"], model_dim=s["dim"], ffn_dim=s["ffn_dim"],
                        vocab_size=len(vocab), max_positions=s["max_positions"], seed=s["seed"])
    config = ModelConfig(encoder=enc, loss=LossConfig(s["lambda_s"], s["lambda_w"], tuple(s["class_weights"])),
                         mix=s["mix"], transform=s["transform"], use_lp_prefix=s["lp_prefix"],
                         max_piece=s["max_piece"], bad_threshold=s["bad_threshold"])
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model, history = train(QEModel(config, vocab), train_set, dev_set, _train_config(s), out / "history.jsonl")
    vocab.save(out / "vocab.txt")
    best = max(history, key=lambda r: r["value"]) if history else None
    model.save(out / "checkpoint.json", extra={"train_config": _train_config(s).to_dict(),
                                               "best_epoch": best["epoch"] if best else 0})
    if best:
        print(f"best epoch {best['epoch']}: {best['metric']} = {best['value']:.4f}")
    print(f"wrote {out / 'checkpoint.json'}")


def cmd_finetune(s: dict) -> None:
    from .data import parse_qe_tsv, split_halves
    from .qe_model import QEModel
    from .training import finetune_fewshot, write_history

    validate_paths(s, ("checkpoint", "data", "out_dir"))
    model = QEModel.load(s["checkpoint"])
    data = parse_qe_tsv(s["data"], s["schema"])
    guard = parse_qe_tsv(s["guard"], s["schema"]) if s["guard"] else None
    tune, valid = split_halves(data, s["split_seed"])
    tuned, summary = finetune_fewshot(model, tune, _train_config(s), valid, guard, s["guard_band"])
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_history(out / "history.jsonl", summary.pop("history", []))
    _write_json(out / "summary.json", summary)
    tuned.save(out / "checkpoint.json", extra={"finetuned_from": str(s["checkpoint"])})
    for lp in sorted(summary.get("after", {}).get("per_lp", {})):
        b = summary["before"]["per_lp"][lp]
        a = summary["after"]["per_lp"][lp]
        print(f"{lp}: " + ", ".join(f"{k} {b[k]:.4f} -> {a[k]:.4f}" for k in ("spearman", "mcc") if k in a))
    if summary.get("guard_violations"):
        print(f"warning: guard band exceeded on {', '.join(summary['guard_violations'])}")


def cmd_predict(s: dict) -> None:
    from .data import parse_qe_tsv
    from .ensemble import write_logits, write_scores, write_tags
    from .qe_model import QEModel

    validate_paths(s, ("checkpoint", "data", "out_dir"))
    model = QEModel.load(s["checkpoint"])
    data = parse_qe_tsv(s["data"], s["schema"])
    preds = model.predict(data, s["batch_size"])
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / "sentence_scores.txt", [p.sentence_score for p in preds])
    write_tags(out / "word_tags.txt", [p.word_tags for p in preds])
    write_logits(out / "word_logits.txt", [p.word_logits for p in preds])
    write_logits(out / "word_probs.txt", [p.word_probs for p in preds])
    print(f"wrote predictions for {len(preds)} segments to {out}")


def _ranking_rows(path) -> list:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(r["layer"], r["head"], r["score"]) for r in obj["heads"]]


def cmd_rank_heads(s: dict) -> None:
    from .data import parse_qe_tsv
    from .explain import rank_heads
    from .qe_model import QEModel

    validate_paths(s, ("checkpoint", "dev", "out"))
    model = QEModel.load(s["checkpoint"])
    ranking = rank_heads(model, parse_qe_tsv(s["dev"], s["schema"]), s["method"], s["query"])
    _write_json(Path(s["out"]), {"method": s["method"], "query": s["query"],
                                 "heads": [{"layer": l, "head": h, "score": v} for l, h, v in ranking]})
    for l, h, v in ranking[:5]:
        print(f"layer {l} head {h}: {v:.4f}")


def _parse_heads(spec: str, s: dict, model) -> list:
    from .data import parse_qe_tsv
    from .explain import rank_heads, top_heads

    L, H = model.config.encoder.num_layers, model.config.encoder.num_heads
    if spec == "all":
        return [(l, h) for l in range(1, L + 1) for h in range(H)]
    if spec.startswith("top"):
        k = int(spec[3:] or 5)
        if s["ranking"]:
            ranking = _ranking_rows(s["ranking"])
        elif s["dev"]:
            ranking = rank_heads(model, parse_qe_tsv(s["dev"], "tags"), s["method"], s["query"])
        else:
            raise UsageError("--heads topK needs --ranking or --dev")
        return top_heads(ranking, k)
    heads = []
    for part in spec.split(","):
        try:
            l, h = (int(v) for v in part.split(":"))
        except ValueError:
            raise UsageError(f"bad head spec {part!r}; expected LAYER:HEAD") from None
        if not (1 <= l <= L and 0 <= h < H):
            raise UsageError(f"head {l}:{h} outside the model (L={L}, H={H})")
        heads.append((l, h))
    return heads


def cmd_explain(s: dict) -> None:
    from .data import parse_qe_tsv
    from .explain import EnsembleDescriptor, ensemble_for_examples, write_explanations
    from .qe_model import QEModel

    validate_paths(s, ("checkpoint", "data", "out_dir"))
    model = QEModel.load(s["checkpoint"])
    data = parse_qe_tsv(s["data"], s["schema"])
    heads = _parse_heads(s["heads"], s, model)
    explanations = ensemble_for_examples(model, data, heads, s["method"], s["query"])
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_explanations(out / "explanations.txt", explanations)
    EnsembleDescriptor(s["method"], heads, s["query"]).save(out / "ensemble.json")
    print(f"explained {len(explanations)} segments with {len(heads)} heads: "
          + " ".join(f"{l}:{h}" for l, h in heads))


def _load_member(path: Path, strategy: str):
    from .ensemble import read_logits, read_scores, read_tags

    name = {"scores": "sentence_scores.txt", "logits": "word_logits.txt", "tags": "word_tags.txt"}[strategy]
    f = path / name
    if not f.exists():
        raise UsageError(f"member {path} has no {name}")
    return {"scores": read_scores, "logits": read_logits, "tags": read_tags}[strategy](f)


def cmd_ensemble(s: dict) -> None:
    from .data import parse_qe_tsv
    from .ensemble import EnsembleSpec, combine, search_weights, write_scores, write_tags

    validate_paths(s, ("members", "data", "out_dir"))
    data = parse_qe_tsv(s["data"], s["schema"])
    spec = EnsembleSpec.load(s["spec"]) if s["spec"] else None
    strategy = spec.kind if spec else s["strategy"]
    members = [_load_member(Path(m), strategy) for m in s["members"]]
    lps = [ex.lp for ex in data]
    for m, path in zip(members, s["members"]):
        if len(m) != len(data):
            raise UsageError(f"member {path} has {len(m)} rows but {s['data']} has {len(data)}")
        if strategy != "scores" and any(len(row) != len(ex.target) for row, ex in zip(m, data)):
            raise UsageError(f"member {path}: word predictions do not match target lengths")
    if spec:
        if len(spec.members) != len(members):
            raise UsageError(f"spec has {len(spec.members)} members, got {len(members)}")
        if s["alpha"] is not None and spec.kind == "tags":
            spec.alpha = {lp: float(s["alpha"]) for lp in spec.weights}
    else:
        if strategy == "scores":
            gold = [ex.score for ex in data]
        else:
            if any(ex.tags is None for ex in data):
                raise UsageError("word-level ensemble search needs gold tags in --data")
            gold = [ex.bad_mask for ex in data]
        ids = [str(m) for m in s["members"]]
        spec = search_weights(members, gold, lps, strategy, s["budget"], s["sweeps"], s["seed"], ids,
                              alpha=s["alpha"])
    combined = combine(spec, members, lps, spec.kind)
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "ensemble_spec.json")
    if spec.kind == "scores":
        write_scores(out / "sentence_scores.txt", combined)
    else:
        write_tags(out / "word_tags.txt", combined)
    print(f"{spec.strategy} ensemble of {len(members)} members; dev metric per LP: "
          + ", ".join(f"{lp} {v:.4f}" for lp, v in sorted(spec.dev_metric.items())))


def cmd_evaluate(s: dict) -> None:
    import numpy as np

    from .data import parse_qe_tsv
    from .ensemble import read_scores, read_tags
    from .explain import read_explanations
    from .metrics import EvalReport, explanation_scores, mcc_best_threshold, sentence_metrics, word_metrics

    validate_paths(s, ("gold", "out_dir"))
    if not s["predictions"] and not s["explanations"]:
        raise UsageError("evaluate needs --predictions and/or --explanations")
    gold = parse_qe_tsv(s["gold"], s["schema"])
    report = EvalReport()
    groups: dict = {}
    for i, ex in enumerate(gold):
        groups.setdefault(ex.lp, []).append(i)
    for lp in groups:
        report.per_lp[lp] = {}
    if s["predictions"]:
        pred_dir = Path(s["predictions"])
        scores_file, tags_file = pred_dir / "sentence_scores.txt", pred_dir / "word_tags.txt"
        if not scores_file.exists() and not tags_file.exists():
            raise UsageError(f"{pred_dir} holds neither sentence_scores.txt nor word_tags.txt")
        if scores_file.exists():
            scores = read_scores(scores_file)
            if len(scores) != len(gold):
                raise UsageError(f"{scores_file} has {len(scores)} rows but gold has {len(gold)}")
            for lp, idx in groups.items():
                pred = [scores[i] for i in idx]
                if s["ced"]:
                    labels = np.array([gold[i].score for i in idx]) > 0.5
                    if labels.all() or not labels.any():
                        continue
                    best, thr = mcc_best_threshold(-np.asarray(pred), labels)
                    report.per_lp[lp].update(ced_mcc=best, ced_threshold=-thr)
                elif len(idx) >= 2:
                    report.per_lp[lp].update(sentence_metrics(pred, [gold[i].score for i in idx]))
        if tags_file.exists():
            tags = read_tags(tags_file)
            if len(tags) != len(gold):
                raise UsageError(f"{tags_file} has {len(tags)} rows but gold has {len(gold)}")
            if any(ex.tags is None for ex in gold):
                raise UsageError("gold file has no word tags to evaluate word predictions")
            for i, ex in enumerate(gold):
                if len(tags[i]) != len(ex.target):
                    raise UsageError(f"{tags_file}:{i + 1}: {len(tags[i])} tags for {len(ex.target)} words")
            for lp, idx in groups.items():
                report.per_lp[lp].update(word_metrics(np.concatenate([tags[i] for i in idx]),
                                                      np.concatenate([gold[i].bad_mask for i in idx])))
    if s["explanations"]:
        expl = read_explanations(s["explanations"])
        if len(expl) != len(gold):
            raise UsageError(f"{s['explanations']} has {len(expl)} rows but gold has {len(gold)}")
        if any(ex.tags is None for ex in gold):
            raise UsageError("explanations need gold word tags")
        for lp, idx in groups.items():
            chosen = [i for i in idx if gold[i].bad_mask.any()]
            if not chosen:
                continue
            for i in chosen:
                if len(expl[i]) != len(gold[i].target):
                    raise UsageError(f"explanation row {i + 1} has {len(expl[i])} scores "
                                     f"for {len(gold[i].target)} words")
            res = explanation_scores([expl[i] for i in chosen], [gold[i].bad_mask for i in chosen],
                                     micro=s["micro_recall"])
            report.per_lp[lp].update({f"expl_{k}": v for k, v in res.items()})
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_tsv(out / "report.tsv")
    print(report.format())


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "rank-heads": cmd_rank_heads,
    "explain": cmd_explain,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args = vars(ns)
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        settings = resolve_settings(command, args)
        COMMANDS[command](settings)
    except UsageError as err:
        print(f"kiwiqe {command}: error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"kiwiqe {command}: error: file not found: {err.filename or err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - surfaced as exit 1
        log.debug("failure", exc_info=True)
        print(f"kiwiqe {command}: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
