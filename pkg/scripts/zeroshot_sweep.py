"""Train the toy MLP at full precision, then sweep accumulator mantissa and bias.

    python3 scripts/zeroshot_sweep.py --out runs/zeroshot --seeds 0-4
"""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from _common import preset, run


def seeds(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/zeroshot"))
    ap.add_argument("--seeds", type=seeds, default=seeds("0-4"))
    args = ap.parse_args()
    acc = defaultdict(list)
    for seed in args.seeds:
        out = args.out / f"seed{seed}"
        common = ["--config", preset("zeroshot-toy"), "--seed", str(seed), "--out", str(out), "--quiet"]
        run("train", *common)
        run("zeroshot", *common)
        with open(out / "zeroshot.csv") as fh:
            for row in csv.DictReader(fh):
                acc[row["sweep"], row["M"], row["E"], row["b"]].append(float(row["acc"]))
    print("sweep     M  E  b   mean_acc  std")
    for (sweep, M, E, b), v in acc.items():
        print(f"{sweep:8s} {M:>2s} {E:>2s} {b:>2s}   {np.mean(v):.4f}  {np.std(v):.4f}")


if __name__ == "__main__":
    main()
