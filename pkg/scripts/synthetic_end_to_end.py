"""Multi-task training on the synthetic generator: dev Spearman / MCC per seed."""
import numpy as np

from _common import dump, parser, setup
from kiwiqe.experiments import synthetic_data, train_run


def main():
    p = parser(__doc__)
    p.add_argument("--epochs", type=int, default=50)
    args = p.parse_args()
    setup(args)
    rows = []
    for seed in args.seeds:
        r = train_run(synthetic_data(seed), seed=seed, size=args.size, epochs=args.epochs)
        rows.append({"seed": seed, "epoch": r.best["epoch"], "seconds": round(r.seconds, 1), **r.dev})
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("spearman", "mcc")}
    dump(args, {"runs": rows, "mean": mean})


if __name__ == "__main__":
    main()
