"""Build an MNIST subset as IDX files from the `mnist` npm package.

The package bundles 10,000 digits as JSON (pixel/255 rounded to 3 decimals,
which rounds back to the original byte).  Samples are shuffled with a fixed seed
and split into train/test IDX pairs under ``--out``.

    python3 scripts/fetch_mnist.py --out data/mnist
    python3 scripts/fetch_mnist.py --tarball mnist-1.1.0.tgz --out data/mnist
"""

import argparse
import json
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from lbasim.data import write_idx  # noqa: E402

PACKAGE = "mnist@1.1.0"


def npm_pack(workdir: Path) -> Path:
    out = subprocess.run(["npm", "pack", PACKAGE], cwd=workdir, check=True, capture_output=True, text=True)
    return workdir / out.stdout.strip().splitlines()[-1]


def read_digits(tarball: Path):
    xs, ys = [], []
    with tarfile.open(tarball) as tf:
        for d in range(10):
            raw = json.load(tf.extractfile(f"package/src/digits/{d}.json"))["data"]
            pix = np.rint(np.asarray(raw, dtype=np.float64) * 255.0).astype(np.uint8).reshape(-1, 784)
            xs.append(pix)
            ys.append(np.full(pix.shape[0], d, dtype=np.uint8))
    return np.concatenate(xs), np.concatenate(ys)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--tarball", help="use a local npm tarball instead of running npm pack")
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tarball = Path(args.tarball) if args.tarball else npm_pack(Path(tmp))
        x, y = read_digits(tarball)
    order = np.random.default_rng(args.seed).permutation(x.shape[0])
    x, y = x[order], y[order]
    n = args.train
    for split, sl in (("train", slice(0, n)), ("test", slice(n, None))):
        write_idx(out / f"{split}-images-idx3-ubyte", x[sl].reshape(-1, 28, 28))
        write_idx(out / f"{split}-labels-idx1-ubyte", y[sl])
        print(f"{split}: {x[sl].shape[0]} samples -> {out}")


if __name__ == "__main__":
    main()
