"""Train the MNIST MLP once per STE variant and print final eval accuracy.

    python3 scripts/table4.py --out runs/table4 [--seed 0] [--epochs 20]
"""

import argparse
from pathlib import Path

from _common import preset, run, summary

VARIANTS = ["table-4-baseline", "table-4-identity", "table-4-recursive-of", "table-4-immediate-of",
            "table-4-immediate-diff", "table-4-immediate-diff-no-uf"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/table4"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, help="override the epoch count of every stage")
    args = ap.parse_args()
    for name in VARIANTS:
        out = args.out / name
        extra = ["--set", f"schedule.0.epochs={args.epochs}"] if args.epochs is not None else []
        run("train", "--config", preset(name), "--seed", str(args.seed), "--out", str(out), "--quiet", *extra)
        print(f"{name:32s} {summary(out)['final_eval_acc']:.4f}", flush=True)


if __name__ == "__main__":
    main()
