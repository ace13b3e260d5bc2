"""Hold out one synthetic language pair, pretrain on the rest, adapt on 500 of its examples."""
from _common import dump, parser, setup
from kiwiqe.experiments import fewshot_experiment


def main():
    p = parser(__doc__)
    p.add_argument("--lr", type=float, default=None, help="fine-tuning learning rate")
    p.add_argument("--epochs", type=int, default=None)
    args = p.parse_args()
    setup(args)
    kw = {k: v for k, v in (("lr", args.lr), ("epochs", args.epochs)) if v is not None}
    rows = []
    for seed in args.seeds:
        r = fewshot_experiment(seed, size=args.size, **kw)
        r.pop("summary")
        rows.append({"seed": seed, **r})
    dump(args, rows)


if __name__ == "__main__":
    main()
