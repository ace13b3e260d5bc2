"""Rank heads with both explainers and score top-5 ensembles against the planted BAD pieces."""
from _common import dump, parser, setup
from kiwiqe.experiments import explainer_signal, synthetic_data, train_run


def main():
    p = parser(__doc__)
    p.add_argument("--sentences", type=int, default=20)
    p.add_argument("--top", type=int, default=5)
    args = p.parse_args()
    setup(args)
    rows = []
    for seed in args.seeds:
        data = synthetic_data(seed)
        model = train_run(data, seed=seed, size=args.size).model
        sig = explainer_signal(model, data.dev, data.test, args.sentences, args.top)
        for method in ("attn_gradnorm", "attn_norm"):
            sig[method]["heads"] = [list(h) for h in sig[method]["heads"]]
        rows.append({"seed": seed, **sig})
    dump(args, rows)


if __name__ == "__main__":
    main()
