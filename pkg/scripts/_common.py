"""Shared argument handling for the experiment scripts."""
import argparse
import json
import logging
from pathlib import Path


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--size", choices=["base", "small"], default="base")
    p.add_argument("--out", type=Path, help="write results here as JSON")
    p.add_argument("-v", "--verbose", action="store_true", help="log every training epoch")
    return p


def setup(args) -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    if not args.verbose:
        logging.getLogger("kiwiqe.training").setLevel(logging.WARNING)


def dump(args, results) -> None:
    text = json.dumps(results, indent=2, sort_keys=True, default=float)
    print(text)
    if args.out:
        args.out.write_text(text + "\n", encoding="utf-8")
