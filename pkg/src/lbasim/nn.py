"""A small fully connected network whose GEMMs run through FMAq.

Weights live in float32 and are updated by Adam in full precision.  The
simulated arithmetic only touches the forward GEMMs (plus the bias add in the
accumulator format) and, through the STE masks, the backward GEMMs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .data import Dataset, LayerParams
from .fmaq import FmaqConfig, gemm_forward
from .grad import SteConfig, SteKind, gemm_backward
from .qformats import FloatFormat, RoundMode, quantize_float

__all__ = [
    "WaQuant",
    "LbaLinear",
    "MLP",
    "build_mlp",
    "flex_bias",
    "quantize_flex",
    "softmax_cross_entropy",
    "AdamParams",
    "Adam",
    "Stage",
    "TrainSchedule",
    "TrainingDiverged",
    "train",
    "evaluate",
    "zeroshot_eval",
    "stuck_underflow_rate",
    "LANDSCAPE_VARIANTS",
    "landscape_probe",
    "write_landscape_csv",
]


# -- weight / activation quantization -------------------------------------------


def flex_bias(t, fmt: FloatFormat) -> int:
    """Largest integer bias whose overflow threshold still exceeds ``max|t|``.

    An all-zero tensor falls back to the format's default bias ``2**(E-1)``.
    """
    a = float(np.max(np.abs(t))) if np.size(t) else 0.0
    if a == 0.0 or not math.isfinite(a):
        return 2 ** (fmt.E - 1)
    # r_of(b) = 2**(2**E - 1 - b) * (2 - 2**-M) > a
    top = 2**fmt.E - 1
    b = math.ceil(top - math.log2(a / (2.0 - 2.0**-fmt.M))) - 1
    # log2 is not exact; settle on the boundary with exact threshold checks
    while fmt.with_bias(b).r_of <= a:
        b -= 1
    while fmt.with_bias(b + 1).r_of > a:
        b += 1
    return b


def quantize_flex(t, fmt: FloatFormat, mode=RoundMode.NEAREST, rng=None) -> tuple[np.ndarray, int]:
    t = np.asarray(t, dtype=np.float64)
    b = flex_bias(t, fmt) if fmt.flex else fmt.b
    f = fmt.with_bias(b)
    if fmt.flex and t.size and np.max(np.abs(t)) >= f.r_of:
        raise AssertionError(f"flex bias {b} leaves values at or above r_of={f.r_of}")
    return quantize_float(t, f, mode, rng=rng), b


@dataclass(frozen=True)
class WaQuant:
    """Weight/activation quantization applied around every LBA GEMM."""

    fmt: FloatFormat = FloatFormat(4, 3, 4, flex=True)
    weight_mode: RoundMode = RoundMode.STOCHASTIC
    act_mode: RoundMode = RoundMode.NEAREST


# -- layers ------------------------------------------------------------------------


@dataclass
class LbaLinear:
    """``y = Q_acc(FMAq-GEMM(a, W^T) + b)``; ``fmaq=None`` means exact arithmetic."""

    weight: np.ndarray  # (out, in) float32
    bias: Optional[np.ndarray] = None  # (out,) float32
    fmaq: Optional[FmaqConfig] = None
    ste: SteConfig = field(default_factory=SteConfig)
    wa: Optional[WaQuant] = None
    quantize_input: bool = True
    _wq: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def refresh_weights(self, rng=None) -> None:
        """Re-derive the quantized weight copy used by forward passes."""
        w = self.weight.astype(np.float64)
        if self.wa is None:
            self._wq = w
            return
        mode = self.wa.weight_mode
        if mode is RoundMode.STOCHASTIC and rng is None:
            mode = RoundMode.NEAREST
        self._wq, _ = quantize_flex(w, self.wa.fmt, mode, rng)

    @property
    def wq(self) -> np.ndarray:
        if self._wq is None:
            self.refresh_weights()
        return self._wq

    def prepare_input(self, a: np.ndarray) -> np.ndarray:
        if self.wa is None or not self.quantize_input:
            return a
        q, _ = quantize_flex(a, self.wa.fmt, self.wa.act_mode)
        return q

    def forward(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns ``(y, a_used)``; ``a_used`` is the (quantized) GEMM input."""
        a = np.ascontiguousarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.shape[1]:
            raise ValueError(f"input of shape {a.shape} does not fit layer {self.shape}")
        aq = self.prepare_input(a)
        wt = np.ascontiguousarray(self.wq.T)
        if self.fmaq is None:
            y = K.plain_gemm(aq, wt)
            if self.bias is not None:
                y = y + self.bias.astype(np.float64)
            return y, aq
        cfg = self.fmaq
        y = gemm_forward(aq, wt, cfg)
        if self.bias is not None:
            # bias enters in the accumulator format through one more Q_acc addition
            ka, ofa, ufa = K.quant_params(cfg.acc_effective)
            bq = K.qtrunc_array(self.bias.astype(np.float64), ka, ofa, ufa, cfg.uf_enabled)
            yb = np.ascontiguousarray(np.broadcast_to(bq, y.shape)).ravel()
            y = K.qadd_array(y.ravel(), yb, ka, ofa, ufa, cfg.uf_enabled).reshape(y.shape)
        return y, aq

    def backward(self, aq: np.ndarray, up: np.ndarray, need_grad_input: bool = True):
        """Gradients w.r.t. (input, weight, bias).  W/A quantizers and the bias
        add pass gradients straight through."""
        wt = np.ascontiguousarray(self.wq.T)
        kind = self.ste if self.fmaq is not None else SteKind.IDENTITY
        ga, gb = gemm_backward(aq, wt, up, self.fmaq, kind, need_grad_a=need_grad_input)
        gbias = up.sum(axis=0) if self.bias is not None else None
        return ga, gb.T, gbias

    def with_arith(self, fmaq: Optional[FmaqConfig], ste=None) -> "LbaLinear":
        out = LbaLinear(self.weight.copy(), None if self.bias is None else self.bias.copy(), fmaq,
                        self.ste if ste is None else ste, self.wa, self.quantize_input)
        out._wq = None if self._wq is None else self._wq.copy()
        return out


class MLP:
    """Stack of LbaLinear layers with ReLU between them (none after the last)."""

    def __init__(self, layers: Sequence[LbaLinear]):
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.shape[0] != b.shape[1]:
                raise ValueError(f"layer widths do not chain: {a.shape} then {b.shape}")
        self.layers = list(layers)

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].shape[1]] + [l.shape[0] for l in self.layers]

    def forward(self, x: np.ndarray, keep: bool = False):
        """Logits for a batch; with ``keep`` also the per-layer GEMM inputs and
        pre-activations needed by :meth:`backward`."""
        h = np.asarray(x, dtype=np.float64)
        inputs, pre = [], []
        for j, layer in enumerate(self.layers):
            y, aq = layer.forward(h)
            if keep:
                inputs.append(aq)
                pre.append(y)
            h = y if j == len(self.layers) - 1 else np.maximum(y, 0.0)
        return (h, inputs, pre) if keep else h

    def backward(self, inputs, pre, dlogits):
        grads = [None] * len(self.layers)
        up = dlogits
        for j in range(len(self.layers) - 1, -1, -1):
            ga, gw, gbias = self.layers[j].backward(inputs[j], up, need_grad_input=j > 0)
            grads[j] = (gw, gbias)
            if j > 0:
                up = ga * (pre[j - 1] > 0.0)
        return grads

    def refresh_weights(self, rng=None) -> None:
        for layer in self.layers:
            layer.refresh_weights(rng)

    def set_arith(self, fmaq: Optional[FmaqConfig] = None, ste=None) -> None:
        for layer in self.layers:
            layer.fmaq = fmaq
            if ste is not None:
                layer.ste = ste if isinstance(ste, SteConfig) else SteConfig(ste)

    def with_arith(self, fmaq: Optional[FmaqConfig], ste=None) -> "MLP":
        return MLP([layer.with_arith(fmaq, ste) for layer in self.layers])

    def params(self) -> list[LayerParams]:
        return [LayerParams(l.weight.copy(), None if l.bias is None else l.bias.copy()) for l in self.layers]

    def load_params(self, params: Sequence[LayerParams]) -> None:
        if len(params) != len(self.layers):
            raise ValueError(f"checkpoint has {len(params)} layers, model has {len(self.layers)}")
        for layer, p in zip(self.layers, params):
            if p.weight.shape != layer.shape or (p.bias is None) != (layer.bias is None):
                raise ValueError(f"checkpoint layer {p.weight.shape} does not match model layer {layer.shape}")
            layer.weight = np.array(p.weight, dtype=np.float32)
            layer.bias = None if p.bias is None else np.array(p.bias, dtype=np.float32)
            layer._wq = None


def build_mlp(widths: Sequence[int], rng: np.random.Generator, fmaq: Optional[FmaqConfig] = None,
              ste=SteKind.IDENTITY, wa: Optional[WaQuant] = None, bias: bool = True) -> MLP:
    """He-uniform weights, zero biases."""
    ste = ste if isinstance(ste, SteConfig) else SteConfig(ste)
    layers = []
    n = len(widths) - 1
    for j, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        lim = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-lim, lim, (fan_out, fan_in)).astype(np.float32)
        b = np.zeros(fan_out, dtype=np.float32) if bias else None
        # the input of the final classifier layer is left unquantized
        layers.append(LbaLinear(w, b, fmaq, ste, wa, quantize_input=j < n - 1))
    return MLP(layers)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.mean(np.log(p[np.arange(n), labels] + 1e-300)))
    g = p
    g[np.arange(n), labels] -= 1.0
    return loss, g / n


# -- optimisation --------------------------------------------------------------------


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


class Adam:
    def __init__(self, model: MLP, params: AdamParams = AdamParams()):
        self.p = params
        self.t = 0
        self.state = []
        for layer in model.layers:
            sb = None if layer.bias is None else (np.zeros(layer.bias.shape), np.zeros(layer.bias.shape))
            self.state.append(((np.zeros(layer.shape), np.zeros(layer.shape)), sb))

    def _update(self, x: np.ndarray, g: np.ndarray, mv, lr: float) -> np.ndarray:
        m, v = mv
        p = self.p
        if p.weight_decay:
            g = g + p.weight_decay * x
        m *= p.beta1
        m += (1 - p.beta1) * g
        v *= p.beta2
        v += (1 - p.beta2) * g * g
        mhat = m / (1 - p.beta1**self.t)
        vhat = v / (1 - p.beta2**self.t)
        return (x - lr * mhat / (np.sqrt(vhat) + p.eps)).astype(np.float32)

    def step(self, model: MLP, grads, lr: float) -> None:
        self.t += 1
        for layer, (gw, gb), (sw, sb) in zip(model.layers, grads, self.state):
            layer.weight = self._update(layer.weight.astype(np.float64), gw, sw, lr)
            if gb is not None:
                layer.bias = self._update(layer.bias.astype(np.float64), gb, sb, lr)


@dataclass(frozen=True)
class Stage:
    epochs: int
    lr: float = 1e-3
    lr_end: float = 0.0
    shape: str = "step"  # step | cosine | constant
    gamma: float = 0.95  # per-epoch decay for "step"
    uf_enabled: bool = True
    name: str = ""

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.shape not in ("step", "cosine", "constant"):
            raise ValueError(f"unknown lr schedule shape {self.shape!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")

    def lr_at(self, epoch: int) -> float:
        if self.shape == "constant":
            return self.lr
        if self.shape == "step":
            return self.lr * self.gamma**epoch
        span = max(self.epochs - 1, 1)
        return self.lr_end + 0.5 * (self.lr - self.lr_end) * (1.0 + math.cos(math.pi * epoch / span))


@dataclass(frozen=True)
class TrainSchedule:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("a schedule needs at least one stage")

    @classmethod
    def two_stage(cls, epochs_no_uf: int, epochs_uf: int, lr: float = 1e-3, uf_lr: Optional[float] = None,
                  **kw) -> "TrainSchedule":
        return cls((Stage(epochs_no_uf, lr, uf_enabled=False, name="no-uf", **kw),
                    Stage(epochs_uf, lr if uf_lr is None else uf_lr, uf_enabled=True, name="uf", **kw)))


class TrainingDiverged(RuntimeError):
    pass


def evaluate(model: MLP, ds: Dataset, batch: int = 500) -> tuple[float, float]:
    """(mean loss, accuracy) over a dataset."""
    if len(ds) == 0:
        return float("nan"), float("nan")
    loss = 0.0
    correct = 0
    for s in range(0, len(ds), batch):
        logits = model.forward(ds.x[s:s + batch])
        l, _ = softmax_cross_entropy(logits, ds.y[s:s + batch])
        loss += l * logits.shape[0]
        correct += int((logits.argmax(axis=1) == ds.y[s:s + batch]).sum())
    return loss / len(ds), correct / len(ds)


def _set_uf(model: MLP, uf: bool) -> None:
    for layer in model.layers:
        if layer.fmaq is not None and layer.fmaq.uf_enabled != uf:
            layer.fmaq = layer.fmaq.replace(uf_enabled=uf)


def train(model: MLP, train_ds: Dataset, schedule: TrainSchedule, *, eval_ds: Optional[Dataset] = None,
          batch_size: int = 16, adam: AdamParams = AdamParams(), shuffle_rng=None, stochastic_rng=None,
          stuck_sample: int = 256, on_epoch: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Run every stage of ``schedule`` and return one metrics row per epoch.

    Row keys: epoch, stage, lr, train_loss, train_acc, eval_acc, stuck_rate.
    ``train_loss``/``train_acc`` are running values over the epoch's batches.
    """
    if len(train_ds) == 0:
        raise ValueError("training set is empty")
    shuffle_rng = shuffle_rng if shuffle_rng is not None else np.random.default_rng(0)
    opt = Adam(model, adam)
    model.refresh_weights(stochastic_rng)
    probe = (eval_ds if eval_ds is not None and len(eval_ds) else train_ds).x[:stuck_sample]
    history = []
    epoch = 0
    for si, stage in enumerate(schedule.stages):
        _set_uf(model, stage.uf_enabled)
        for e in range(stage.epochs):
            lr = stage.lr_at(e)
            order = shuffle_rng.permutation(len(train_ds))
            tot_loss = 0.0
            correct = 0
            for s in range(0, len(order), batch_size):
                idx = order[s:s + batch_size]
                logits, inputs, pre = model.forward(train_ds.x[idx], keep=True)
                loss, dlogits = softmax_cross_entropy(logits, train_ds.y[idx])
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at stage {si} ({stage.name or 'unnamed'}), "
                                           f"epoch {epoch}, batch offset {s}")
                tot_loss += loss * idx.size
                correct += int((logits.argmax(axis=1) == train_ds.y[idx]).sum())
                grads = model.backward(inputs, pre, dlogits)
                opt.step(model, grads, lr)
                model.refresh_weights(stochastic_rng)
            row = dict(epoch=epoch, stage=si, lr=lr, train_loss=tot_loss / len(order),
                       train_acc=correct / len(order),
                       eval_acc=evaluate(model, eval_ds)[1] if eval_ds is not None else float("nan"),
                       stuck_rate=stuck_underflow_rate(model, probe))
            history.append(row)
            if on_epoch is not None:
                on_epoch(row)
            epoch += 1
    return history


# -- diagnostics ---------------------------------------------------------------------


def stuck_underflow_rate(model: MLP, x: np.ndarray, fmaq: Optional[FmaqConfig] = None) -> float:
    """Fraction of (activation, weight) pairs with a nonzero activation whose
    product falls below the product format's underflow threshold.

    Zero activations are excluded (they are not a property of the weights).  A
    zero weight always counts as stuck, so all-zero weights give 1.  Layers
    without an FMAq config are skipped unless ``fmaq`` is given.
    """
    h = np.asarray(x, dtype=np.float64)
    stuck = 0
    total = 0
    for j, layer in enumerate(model.layers):
        cfg = fmaq or layer.fmaq
        y, aq = layer.forward(h)
        if cfg is not None:
            r = cfg.prod_fmt.r_uf
            aw = np.abs(layer.wq)  # (out, in)
            for row in np.abs(aq):
                nz = row > 0
                cnt = int(nz.sum())
                if cnt:
                    total += cnt * aw.shape[0]
                    stuck += int(((row[nz][None, :] * aw[:, nz]) < r).sum())
        h = y if j == len(model.layers) - 1 else np.maximum(y, 0.0)
    return stuck / total if total else 0.0


def zeroshot_eval(model: MLP, ds: Dataset, configs: Iterable[Optional[FmaqConfig]]) -> list[dict]:
    """Accuracy of the unchanged weights with every GEMM swapped to each config."""
    rows = []
    for cfg in configs:
        m = model.with_arith(cfg)
        _, acc = evaluate(m, ds)
        if cfg is None:
            rows.append(dict(M="", E="", b="", acc=acc))
        else:
            f = cfg.prod_fmt
            rows.append(dict(M=f.M, E=f.E, b=f.b, acc=acc))
    return rows


LANDSCAPE_VARIANTS = ("full", "no_uf", "no_swamp")


def _variant_cfg(cfg: Optional[FmaqConfig], variant: str) -> Optional[FmaqConfig]:
    if cfg is None or variant == "full":
        return cfg
    if variant == "no_uf":
        return cfg.replace(uf_enabled=False)
    if variant == "no_swamp":
        return cfg.replace(acc_extra_mantissa=16)
    raise ValueError(f"unknown landscape variant {variant!r}")


def _filter_normalized(model: MLP, rng) -> list[np.ndarray]:
    dirs = []
    for layer in model.layers:
        d = rng.standard_normal(layer.shape)
        wn = np.linalg.norm(layer.weight.astype(np.float64), axis=1, keepdims=True)
        dn = np.linalg.norm(d, axis=1, keepdims=True)
        # an all-zero weight row keeps a unit-norm direction instead of vanishing
        dirs.append(d * np.where(wn > 0, wn, 1.0) / np.where(dn > 0, dn, 1.0))
    return dirs


def landscape_probe(model: MLP, ds: Dataset, rng, radius: float = 1.0, steps: int = 11,
                    variants: Sequence[str] = LANDSCAPE_VARIANTS, cfg: Optional[FmaqConfig] = None):
    """Loss on a 2-d grid ``theta + a*d1 + b*d2`` for each arithmetic variant.

    ``d1``/``d2`` are random Gaussian directions rescaled so every output
    neuron's direction row has the norm of its weight row (unit norm for a zero
    row); biases stay fixed.
    Returns ``(coords, {variant: grid})`` with ``grid[i, j]`` at
    ``(coords[i], coords[j])``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    base_cfg = cfg if cfg is not None else model.layers[0].fmaq
    d1 = _filter_normalized(model, rng)
    d2 = _filter_normalized(model, rng)
    coords = np.linspace(-radius, radius, steps) if steps > 1 else np.zeros(1)
    base = [layer.weight.astype(np.float64) for layer in model.layers]
    out = {}
    for variant in variants:
        probe = model.with_arith(_variant_cfg(base_cfg, variant))
        grid = np.empty((steps, steps))
        for i, a in enumerate(coords):
            for j, b in enumerate(coords):
                for layer, w0, u, v in zip(probe.layers, base, d1, d2):
                    layer.weight = (w0 + a * u + b * v).astype(np.float32)
                    layer._wq = None
                grid[i, j] = evaluate(probe, ds)[0]
        out[variant] = grid
    return coords, out


def write_landscape_csv(path, coords: np.ndarray, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "loss"])
        for i, a in enumerate(coords):
            for j, b in enumerate(coords):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(grid[i, j]))])
