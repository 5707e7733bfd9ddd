"""Probe the loss surface of a trained run along two random directions.

Writes one CSV per variant (full, no_uf, no_swamp) into the run directory.

    python3 scripts/landscape.py --config presets/zeroshot-toy.json --out runs/zeroshot-toy
"""

import argparse
from pathlib import Path

from _common import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", type=Path, required=True, help="run directory holding model.lba")
    ap.add_argument("--fmaq", default="M4E3b7", help="accumulator format for the quantized variants")
    ap.add_argument("--steps", type=int, default=21)
    ap.add_argument("--radius", type=float, default=1.0)
    args = ap.parse_args()
    if not (args.out / "model.lba").exists():
        run("train", "--config", args.config, "--out", str(args.out), "--quiet")
    run("landscape", "--config", args.config, "--out", str(args.out), "--steps", str(args.steps),
        "--radius", str(args.radius), "--set", f'fmaq={{"prod": "{args.fmaq}"}}')


if __name__ == "__main__":
    main()
