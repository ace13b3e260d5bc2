"""Three independently seeded members per trial; weights searched on dev, applied to test."""
import numpy as np

from _common import dump, parser, setup
from kiwiqe.experiments import ensemble_trial


def main():
    p = parser(__doc__)
    p.set_defaults(size="small")
    p.add_argument("--members", type=int, default=3)
    args = p.parse_args()
    setup(args)
    rows = []
    for t in args.seeds:
        out = ensemble_trial(t, n_members=args.members, size=args.size)
        rows.append({"trial": t, "member_test_mcc": out["member_test_mcc"],
                     "mean_member_test_mcc": float(np.mean(out["member_test_mcc"])),
                     "ensemble_test_mcc": out["ensemble_test_mcc"],
                     "dev": {kind: spec.to_dict() for kind, spec in out["search"].items()}})
    dump(args, rows)


if __name__ == "__main__":
    main()
