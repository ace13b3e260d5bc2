"""Sentence-only vs word-only vs multi-task losses on the same synthetic data."""
from _common import dump, parser, setup
from kiwiqe.experiments import synthetic_data, train_run

SETTINGS = {"multi": (1.0, 1.0), "sentence": (1.0, 0.0), "word": (0.0, 1.0)}


def main():
    args = parser(__doc__).parse_args()
    setup(args)
    rows = []
    for seed in args.seeds:
        data = synthetic_data(seed)
        dev = {name: train_run(data, ls, lw, seed=seed, size=args.size).dev for name, (ls, lw) in SETTINGS.items()}
        rows.append({"seed": seed,
                     "spearman": {k: v.get("spearman") for k, v in dev.items() if k != "word"},
                     "mcc": {k: v.get("mcc") for k, v in dev.items() if k != "sentence"}})
        rows[-1]["multi_helps"] = (rows[-1]["spearman"]["multi"] >= rows[-1]["spearman"]["sentence"] - 0.02
                                   and rows[-1]["mcc"]["multi"] > rows[-1]["mcc"]["word"])
    dump(args, rows)


if __name__ == "__main__":
    main()
