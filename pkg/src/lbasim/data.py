"""Datasets (IDX files, synthetic generators) and run-artifact persistence.

Features stay in full precision here; every quantization step lives in
:mod:`lbasim.nn`.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Dataset",
    "IdxError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "CheckpointError",
    "load_idx",
    "read_idx",
    "write_idx",
    "SyntheticSpec",
    "generate",
    "LayerParams",
    "save_checkpoint",
    "load_checkpoint",
    "METRIC_COLUMNS",
    "write_metrics_csv",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, d) float64 in [0, 1]
    y: np.ndarray  # (n,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, name: Optional[str] = None) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.num_classes, name or self.name)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return (self.subset(slice(0, n_first), f"{self.name}[:{n_first}]"),
                self.subset(slice(n_first, None), f"{self.name}[{n_first}:]"))


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    def __init__(self, path, offset: int, needed: int):
        self.offset = offset
        super().__init__(f"{path}: truncated at byte offset {offset} (needed {needed} more bytes)")


class CountMismatchError(IdxError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic: Optional[int] = None) -> np.ndarray:
    """Read a big-endian unsigned-byte IDX file into a uint8 array."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(path, len(raw), 4 - len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic >> 8 != 0x08 or (expected_magic is not None and magic != expected_magic):
        want = f"0x{expected_magic:08x}" if expected_magic is not None else "0x000008xx"
        raise BadMagicError(f"{path}: bad IDX magic 0x{magic:08x}, expected {want}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFileError(path, len(raw), head - len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < head + size:
        raise TruncatedFileError(path, len(raw), head + size - len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + arr.tobytes())


def load_idx(images_path, labels_path, num_classes: int = 10, name: str = "") -> Dataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes, name or Path(images_path).name)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "gaussian-blobs"  # or "linearly-separable"
    dim: int = 16
    classes: int = 4
    samples: int = 512
    seed: int = 0
    spread: float = 0.15  # blob std relative to the unit cube
    margin: float = 0.05  # half-gap around the separating hyperplane(s)

    def __post_init__(self):
        if self.kind not in ("gaussian-blobs", "linearly-separable"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if min(self.dim, self.classes, self.samples) <= 0:
            raise ValueError("dim, classes and samples must be positive")


def generate(spec: SyntheticSpec) -> Dataset:
    """Deterministic toy dataset with features in [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    n, d, k = spec.samples, spec.dim, spec.classes
    if spec.kind == "gaussian-blobs":
        means = rng.uniform(0.2, 0.8, (k, d))
        y = rng.integers(0, k, n)
        x = np.clip(means[y] + spec.spread * rng.standard_normal((n, d)), 0.0, 1.0)
        return Dataset(x, y, k, f"blobs-{spec.seed}")
    # k slabs along a random unit direction, with a 2*margin gap between slabs
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    ref = (rng.uniform(0.0, 1.0, (4096, d)) - 0.5) @ u
    edges = np.quantile(ref, np.arange(1, k) / k)
    xs = []
    have = 0
    while have < n:
        cand = rng.uniform(0.0, 1.0, (2 * n, d))
        t = (cand - 0.5) @ u
        keep = np.all(np.abs(t[:, None] - edges[None, :]) >= spec.margin, axis=1)
        xs.append(cand[keep])
        have += int(keep.sum())
    x = np.vstack(xs)[:n]
    y = np.searchsorted(edges, (x - 0.5) @ u)
    return Dataset(x, y, k, f"separable-{spec.seed}")


# -- checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"LBA1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class LayerParams:
    weight: np.ndarray  # (out, in) float32
    bias: Optional[np.ndarray] = field(default=None)


def save_checkpoint(path, layers: Sequence[LayerParams]) -> None:
    """Little-endian: magic, u32 version, u32 layer count, then per layer
    u32 rows, u32 cols, row-major f32 weights, u8 bias flag, f32 bias values."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(layers))]
    for layer in layers:
        w = np.ascontiguousarray(layer.weight, dtype="<f4")
        if w.ndim != 2:
            raise CheckpointError("weights must be 2-d")
        parts.append(struct.pack("<II", *w.shape))
        parts.append(w.tobytes())
        if layer.bias is None:
            parts.append(b"\x00")
        else:
            b = np.ascontiguousarray(layer.bias, dtype="<f4")
            if b.shape != (w.shape[0],):
                raise CheckpointError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
            parts.append(b"\x01")
            parts.append(b.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> list[LayerParams]:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte offset {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an LBA1 checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    layers = []
    for _ in range(count):
        rows, cols = struct.unpack("<II", take(8))
        w = np.frombuffer(take(4 * rows * cols), dtype="<f4").reshape(rows, cols).astype(np.float32)
        flag = take(1)[0]
        bias = np.frombuffer(take(4 * rows), dtype="<f4").astype(np.float32) if flag else None
        layers.append(LayerParams(w, bias))
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return layers


# -- metrics ---------------------------------------------------------------------

METRIC_COLUMNS = ("epoch", "stage", "lr", "train_loss", "train_acc", "eval_acc", "stuck_rate")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
