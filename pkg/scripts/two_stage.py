"""Compare the no-UF-then-UF schedule with a single UF stage on MNIST (M7E4).

    python3 scripts/two_stage.py --out runs/two_stage [--seed 0]
"""

import argparse
from pathlib import Path

from _common import preset, run, summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/two_stage"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name in ("two-stage-dual", "two-stage-single"):
        out = args.out / name
        run("train", "--config", preset(name), "--seed", str(args.seed), "--out", str(out), "--quiet")
        s = summary(out)
        stuck = " -> ".join(f"{x['final_stuck_rate']:.4f}" for x in s["stages"])
        print(f"{name:18s} acc {s['final_eval_acc']:.4f}  stuck {s['initial_stuck_rate']:.4f} -> {stuck}")


if __name__ == "__main__":
    main()
