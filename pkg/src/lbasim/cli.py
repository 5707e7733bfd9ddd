"""Command-line front end.

    lbasim quantize 64 M7E4b10
    lbasim train --config presets/table-4-recursive-of.json --out runs/rec
    lbasim zeroshot --config presets/zeroshot-toy.json --checkpoint runs/toy/model.lba
    lbasim gates --config presets/table-6-gates.json
    lbasim landscape --config presets/table-4-baseline.json --checkpoint runs/base/model.lba
    lbasim report runs/*

Exit codes: 0 ok, 1 run failure (diverged training, I/O), 2 config error.
A run is reproducible from its config file and seed alone: all randomness is
drawn from named sub-streams (``init``, ``shuffle``, ``stochastic``, ``landscape``)
of the run seed.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .data import (Dataset, IdxError, SyntheticSpec, generate, load_checkpoint, load_idx, save_checkpoint,
                   write_metrics_csv)
from .fmaq import FmaqConfig
from .gates import GateParams, format_ratio_table, gate_ratio_report, write_ratio_csv
from .grad import SteConfig
from .nn import (LANDSCAPE_VARIANTS, Stage, TrainingDiverged, TrainSchedule, WaQuant, build_mlp, evaluate,
                 landscape_probe, stuck_underflow_rate, train, write_landscape_csv, zeroshot_eval)
from .qformats import (EventKind, FixedFormat, FloatFormat, FormatParseError, RoundMode, classify_array,
                       parse_format, quantize_fixed)

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Collected validation problems; ``problems`` holds one message per issue."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose of a run."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


# -- run configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    """JSON-serialisable description of one training run.

    ``fmaq`` is ``None`` for full-precision arithmetic, otherwise a dict with
    ``prod`` (format string), optional ``acc``, ``chunk_size``, ``uf_enabled``
    and ``acc_extra_mantissa``.  ``data`` selects ``{"source": "idx", "dir": ...}``
    or ``{"source": "synthetic", ...SyntheticSpec fields, "eval_fraction": ...}``.
    Relative data and checkpoint paths are resolved against the config file's
    directory; ``out`` is relative to the working directory.
    """

    name: str = "run"
    widths: list = field(default_factory=lambda: [784, 256, 256, 256, 10])
    activation: str = "relu"
    bias: bool = True
    fmaq: Optional[dict] = None
    ste: dict = field(default_factory=lambda: {"kind": "identity"})
    wa: Optional[dict] = None
    schedule: list = field(default_factory=lambda: [{"epochs": 20, "lr": 1e-3}])
    data: dict = field(default_factory=lambda: {"source": "idx", "dir": "../data/mnist"})
    batch_size: int = 16
    seed: int = 0
    out: str = "runs/run"
    init_checkpoint: Optional[str] = None
    stuck_sample: int = 256
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = sorted(set(d) - known - {"command"})
        if unknown:
            raise ConfigError([f"unknown config keys: {', '.join(unknown)}"])
        return cls(**{k: copy.deepcopy(v) for k, v in d.items() if k in known}, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError([f"config file {path} does not exist"]) from None
        except json.JSONDecodeError as err:
            raise ConfigError([f"{path}: invalid JSON ({err})"]) from None
        if not isinstance(raw, dict):
            raise ConfigError([f"{path}: top level must be an object"])
        return cls.from_dict(raw, path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # Each builder below returns the typed object or appends to ``problems``.

    def build_fmaq(self, problems: list) -> Optional[FmaqConfig]:
        if self.fmaq is None:
            return None
        f = dict(self.fmaq)
        try:
            prod = _float_format(f.pop("prod", None), "fmaq.prod")
            acc = f.pop("acc", None)
            acc = None if acc is None else _float_format(acc, "fmaq.acc")
            unknown = sorted(set(f) - {"chunk_size", "uf_enabled", "acc_extra_mantissa"})
            if unknown:
                raise ValueError(f"fmaq: unknown keys {', '.join(unknown)}")
            return FmaqConfig(prod, acc, **f)
        except (ValueError, TypeError) as err:
            problems.append(_msg("fmaq", err))
            return None

    def build_ste(self, problems: list) -> Optional[SteConfig]:
        try:
            return SteConfig(**self.ste)
        except (ValueError, TypeError) as err:
            problems.append(_msg("ste", err))
            return None

    def build_wa(self, problems: list) -> Optional[WaQuant]:
        if self.wa is None:
            return None
        w = dict(self.wa)
        try:
            fmt = _float_format(w.pop("fmt", "M4E3flex"), "wa.fmt")
            return WaQuant(fmt, RoundMode.parse(w.pop("weight_mode", "stochastic")),
                           RoundMode.parse(w.pop("act_mode", "nearest")), **w)
        except (ValueError, TypeError) as err:
            problems.append(_msg("wa", err))
            return None

    def build_schedule(self, problems: list) -> Optional[TrainSchedule]:
        if not isinstance(self.schedule, list) or not self.schedule:
            problems.append("schedule: needs at least one stage")
            return None
        stages = []
        for i, s in enumerate(self.schedule):
            try:
                s = dict(s)
                if "uf" in s:
                    s["uf_enabled"] = s.pop("uf")
                stages.append(Stage(**s))
            except (ValueError, TypeError) as err:
                problems.append(_msg(f"schedule[{i}]", err))
        # a no-UF stage may only precede UF stages (disable first, then enable)
        seen_uf = False
        for i, s in enumerate(stages):
            if s.uf_enabled:
                seen_uf = True
            elif seen_uf:
                problems.append(f"schedule[{i}]: a UF-disabled stage cannot follow a UF-enabled stage")
        return TrainSchedule(stages) if stages and len(stages) == len(self.schedule) else None

    def validate(self) -> dict:
        """Check everything that can be checked without touching data; raise
        :class:`ConfigError` listing every problem found."""
        problems: list[str] = []
        if (not isinstance(self.widths, list) or len(self.widths) < 2
                or not all(isinstance(w, int) and w > 0 for w in self.widths)):
            problems.append("widths: need at least two positive integers")
        if self.activation != "relu":
            problems.append(f"activation: only 'relu' is supported, got {self.activation!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            problems.append("batch_size: must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append("seed: must be a non-negative integer")
        built = dict(fmaq=self.build_fmaq(problems), ste=self.build_ste(problems), wa=self.build_wa(problems),
                     schedule=self.build_schedule(problems))
        src = self.data.get("source") if isinstance(self.data, dict) else None
        if src == "synthetic":
            try:
                spec = _synthetic_spec(self.data)
                if isinstance(self.widths, list) and self.widths and (self.widths[0], self.widths[-1]) != (
                        spec.dim, spec.classes):
                    problems.append(f"widths: synthetic data has dim {spec.dim} and {spec.classes} classes, "
                                    f"model maps {self.widths[0]} -> {self.widths[-1]}")
            except (ValueError, TypeError) as err:
                problems.append(_msg("data", err))
        elif src == "idx":
            if "dir" not in self.data:
                problems.append("data: idx source needs 'dir'")
        else:
            problems.append(f"data.source: expected 'idx' or 'synthetic', got {src!r}")
        if problems:
            raise ConfigError(problems)
        return built


def _float_format(text, where: str) -> FloatFormat:
    if not isinstance(text, str):
        raise ValueError(f"{where}: expected a format string such as 'M7E4b10'")
    fmt = parse_format(text)
    if not isinstance(fmt, FloatFormat):
        raise ValueError(f"{where}: {text!r} is fixed point, a float format is required")
    return fmt


def _msg(where: str, err: Exception) -> str:
    text = str(err)
    return text if text.startswith(where) else f"{where}: {text}"


def _synthetic_spec(d: dict) -> SyntheticSpec:
    keys = {"kind", "dim", "classes", "samples", "seed", "spread", "margin"}
    return SyntheticSpec(**{k: v for k, v in d.items() if k in keys})


def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d["source"] == "synthetic":
        ds = generate(_synthetic_spec(d))
        n_eval = int(round(len(ds) * d.get("eval_fraction", 0.2)))
        train_ds, eval_ds = ds.split(len(ds) - n_eval)
    else:
        root = cfg.resolve(d["dir"])
        train_ds = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte", name="train")
        eval_ds = load_idx(root / "test-images-idx3-ubyte", root / "test-labels-idx1-ubyte", name="test")
    if d.get("train_limit") is not None:
        train_ds = train_ds.subset(slice(0, int(d["train_limit"])))
    if d.get("eval_limit") is not None:
        eval_ds = eval_ds.subset(slice(0, int(d["eval_limit"])))
    if train_ds.dim != cfg.widths[0] or train_ds.num_classes != cfg.widths[-1]:
        raise ConfigError([f"widths: data has dim {train_ds.dim} and {train_ds.num_classes} classes, "
                           f"model maps {cfg.widths[0]} -> {cfg.widths[-1]}"])
    return train_ds, eval_ds


def build_model(cfg: RunConfig, built: dict, checkpoint=None):
    model = build_mlp(cfg.widths, substream(cfg.seed, "init"), built["fmaq"], built["ste"], built["wa"], cfg.bias)
    ckpt = checkpoint if checkpoint is not None else cfg.init_checkpoint
    if ckpt is not None:
        path = cfg.resolve(ckpt) if checkpoint is None else Path(ckpt)
        if not path.exists():
            raise ConfigError([f"checkpoint {path} does not exist"])
        try:
            model.load_params(load_checkpoint(path))
        except ValueError as err:
            raise ConfigError([str(err)]) from None
    return model


def apply_overrides(raw: dict, sets: Sequence[str]) -> dict:
    """Apply ``key.sub.0=value`` overrides (value parsed as JSON, else string)."""
    raw = copy.deepcopy(raw)
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        try:
            val = json.loads(value)
        except json.JSONDecodeError:
            val = value
        node: Any = raw
        parts = key.split(".")
        try:
            for p in parts[:-1]:
                node = node[int(p)] if isinstance(node, list) else node.setdefault(p, {})
            last = parts[-1]
            if isinstance(node, list):
                node[int(last)] = val
            else:
                node[last] = val
        except (IndexError, ValueError, TypeError, AttributeError):
            raise ConfigError([f"--set: cannot address {key!r}"]) from None
    return raw


def _load_run_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError(["--config is required for this command"])
    path = Path(args.config)
    cfg = RunConfig.load(path)
    if args.set:
        cfg = RunConfig.from_dict(apply_overrides(cfg.to_dict(), args.set), path.parent)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg: Optional[RunConfig] = None) -> Path:
    """``--out`` wins; otherwise the config's ``out`` (relative to the working directory)."""
    out = Path(args.out) if args.out else Path(cfg.out) if cfg is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------------


def cmd_quantize(args) -> int:
    try:
        fmt = parse_format(args.format)
        mode = RoundMode.parse(args.mode)
    except FormatParseError as err:
        print(f"error: {err}", file=sys.stderr)
        print(f"  {err.text}\n  {' ' * err.position}^", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    x = args.value
    rng = substream(args.seed or 0, "stochastic") if mode is RoundMode.STOCHASTIC else None
    if isinstance(fmt, FixedFormat):
        q = quantize_fixed(x, fmt, mode, rng)
        if x >= fmt.r_max + fmt.step or x < fmt.r_min:
            kind = EventKind.OVERFLOW
        elif q == x:
            kind = EventKind.EXACT
        elif q == 0.0:
            kind = EventKind.UNDERFLOW
        else:
            kind = EventKind.SWAMP
        abs_err = abs(q - x)
        rel_err = abs_err / abs(x) if x else 0.0
    else:
        if fmt.flex:
            print("error: flex formats pick their bias per tensor; give an explicit bias", file=sys.stderr)
            return EXIT_CONFIG
        q, kinds, abs_err, rel_err = classify_array(x, fmt, mode, not args.no_uf, args.extra_mantissa, rng)
        q, kind, abs_err, rel_err = float(q), EventKind(int(kinds)), float(abs_err), float(rel_err)
    label = "rounding" if kind is EventKind.SWAMP else kind.name.lower()
    print(f"{q!r}\t{label}\tabs_err={abs_err!r}\trel_err={rel_err!r}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    built = cfg.validate()
    train_ds, eval_ds = load_data(cfg)
    model = build_model(cfg, built)
    out = _out_dir(args, cfg)
    stochastic = substream(cfg.seed, "stochastic") if built["wa"] is not None else None
    probe = eval_ds.x[:cfg.stuck_sample]
    model.refresh_weights(None)
    stuck0 = stuck_underflow_rate(model, probe)
    log = (lambda r: print(f"epoch {r['epoch']:3d} stage {r['stage']} lr {r['lr']:.3g} "
                           f"loss {r['train_loss']:.4f} train {r['train_acc']:.4f} eval {r['eval_acc']:.4f} "
                           f"stuck {r['stuck_rate']:.4f}", flush=True)) if not args.quiet else None
    try:
        history = train(model, train_ds, built["schedule"], eval_ds=eval_ds, batch_size=cfg.batch_size,
                        shuffle_rng=substream(cfg.seed, "shuffle"), stochastic_rng=stochastic,
                        stuck_sample=cfg.stuck_sample, on_epoch=log)
    except TrainingDiverged as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    write_metrics_csv(out / "metrics.csv", history)
    save_checkpoint(out / "model.lba", model.params())
    final_loss, final_acc = evaluate(model, eval_ds)
    stages = []
    for si, stage in enumerate(built["schedule"].stages):
        rows = [r for r in history if r["stage"] == si]
        stages.append(dict(stage=si, name=stage.name, epochs=stage.epochs, uf_enabled=stage.uf_enabled,
                           final_eval_acc=rows[-1]["eval_acc"] if rows else None,
                           final_stuck_rate=rows[-1]["stuck_rate"] if rows else None))
    summary = dict(name=cfg.name, seed=cfg.seed, train_samples=len(train_ds), eval_samples=len(eval_ds),
                   initial_stuck_rate=stuck0, final_eval_loss=final_loss, final_eval_acc=final_acc,
                   final_stuck_rate=stuck_underflow_rate(model, probe), stages=stages, config=cfg.to_dict())
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{cfg.name}: eval accuracy {final_acc:.4f} -> {out}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    vals = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        vals.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    return vals


def _checkpoint_arg(args, cfg: RunConfig) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return _out_dir(args, cfg) / "model.lba"


def cmd_zeroshot(args) -> int:
    cfg = _load_run_config(args)
    built = cfg.validate()
    ckpt = _checkpoint_arg(args, cfg)
    model = build_model(cfg, built, ckpt)
    _, eval_ds = load_data(cfg)
    configs, tags = [None], ["full"]
    try:
        for M in _int_list(args.mantissas):
            configs.append(FmaqConfig(FloatFormat(M, args.exponent, args.bias), chunk_size=args.chunk))
            tags.append("mantissa")
        for b in _int_list(args.biases):
            configs.append(FmaqConfig(FloatFormat(args.bias_mantissa, args.exponent, b), chunk_size=args.chunk))
            tags.append("bias")
    except ValueError as err:
        raise ConfigError([f"sweep: {err}"]) from None
    rows = zeroshot_eval(model, eval_ds, configs)
    out = _out_dir(args, cfg)
    with open(out / "zeroshot.csv", "w") as fh:
        fh.write("sweep,M,E,b,acc\n")
        for tag, r in zip(tags, rows):
            fh.write(f"{tag},{r['M']},{r['E']},{r['b']},{r['acc']!r}\n")
            print(f"{tag:8s} M={r['M']!s:>2} E={r['E']!s:>2} b={r['b']!s:>3}  acc={r['acc']:.4f}")
    return EXIT_OK


DEFAULT_GATE_POINTS = [(4, 3, 23, 8), (4, 3, 10, 5), (4, 3, 7, 4)]


def cmd_gates(args) -> int:
    points = DEFAULT_GATE_POINTS
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
            points = [tuple(p) for p in raw["points"]]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as err:
            raise ConfigError([f"gates config: {err}"]) from None
    if args.points:
        points = [tuple(int(v) for v in p.split(",")) for p in args.points.split(";")]
    try:
        params = [GateParams(*p) for p in points]
        rows = gate_ratio_report(params)
    except (ValueError, TypeError) as err:
        raise ConfigError([f"gates: {err}"]) from None
    print(format_ratio_table(rows))
    if args.out:
        out = _out_dir(args)
        with open(out / "gates.csv", "w", newline="") as fh:
            write_ratio_csv(rows, fh)
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = _load_run_config(args)
    built = cfg.validate()
    variants = args.variants.split(",")
    bad = [v for v in variants if v not in LANDSCAPE_VARIANTS]
    if bad:
        raise ConfigError([f"landscape: unknown variants {', '.join(bad)}"])
    ckpt = _checkpoint_arg(args, cfg)
    model = build_model(cfg, built, ckpt)
    _, eval_ds = load_data(cfg)
    if args.samples:
        eval_ds = eval_ds.subset(slice(0, args.samples))
    coords, grids = landscape_probe(model, eval_ds, substream(cfg.seed, "landscape"), args.radius, args.steps,
                                    variants, built["fmaq"])
    out = _out_dir(args, cfg)
    for v, g in grids.items():
        write_landscape_csv(out / f"landscape-{v}.csv", coords, g)
        print(f"{v:9s} min {g.min():.4f}  centre {g[len(coords) // 2, len(coords) // 2]:.4f}  max {g.max():.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for d in args.runs:
        p = Path(d) / "summary.json"
        try:
            s = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as err:
            print(f"error: {p}: {err}", file=sys.stderr)
            return EXIT_RUN_FAILURE
        rows.append((s["name"], s["seed"], s["final_eval_acc"], s["initial_stuck_rate"], s["final_stuck_rate"]))
    header = ("name", "seed", "eval_acc", "stuck_start", "stuck_end")
    lines = [header] + [(n, str(sd), f"{a:.4f}", f"{s0:.4f}", f"{s1:.4f}") for n, sd, a, s0, s1 in rows]
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    for line in lines:
        print("  ".join(c.ljust(w) for c, w in zip(line, widths)))
    if args.out:
        out = _out_dir(args)
        with open(out / "report.csv", "w") as fh:
            fh.write(",".join(header) + "\n")
            for n, sd, a, s0, s1 in rows:
                fh.write(f"{n},{sd},{a!r},{s0!r},{s1!r}\n")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="numba worker threads (results do not depend on it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. schedule.0.epochs=1 (repeatable)")
    common.add_argument("--quiet", action="store_true")

    ap = argparse.ArgumentParser(prog="lbasim", description="Low bit-width accumulator simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", parents=[common], help="quantize one value and classify the event")
    q.add_argument("value", type=float)
    q.add_argument("format", help="e.g. M7E4b10 or FIXED8b4")
    q.add_argument("--mode", default="truncate", help="truncate | nearest | stochastic")
    q.add_argument("--no-uf", action="store_true", help="disable underflow flushing")
    q.add_argument("--extra-mantissa", type=int, default=0)
    q.set_defaults(func=cmd_quantize)

    t = sub.add_parser("train", parents=[common], help="train from a run config")
    t.set_defaults(func=cmd_train)

    z = sub.add_parser("zeroshot", parents=[common], help="accuracy of a checkpoint under swapped FMAq configs")
    z.add_argument("--checkpoint")
    z.add_argument("--mantissas", default="3-10", help="mantissa sweep, e.g. 3-10 or 4,7,10")
    z.add_argument("--exponent", type=int, default=4)
    z.add_argument("--bias", type=int, default=12, help="product bias for the mantissa sweep")
    z.add_argument("--biases", default="2-18", help="bias sweep at --bias-mantissa")
    z.add_argument("--bias-mantissa", type=int, default=7)
    z.add_argument("--chunk", type=int, default=16)
    z.set_defaults(func=cmd_zeroshot)

    g = sub.add_parser("gates", parents=[common], help="gate-count ratio table")
    g.add_argument("--points", help="design points 'm,e,M,E;...'; the first is the 100%% reference")
    g.set_defaults(func=cmd_gates)

    ls = sub.add_parser("landscape", parents=[common], help="2-d loss scan around a checkpoint")
    ls.add_argument("--checkpoint")
    ls.add_argument("--radius", type=float, default=1.0)
    ls.add_argument("--steps", type=int, default=11)
    ls.add_argument("--samples", type=int, default=0, help="evaluate on the first N eval samples (0: all)")
    ls.add_argument("--variants", default=",".join(LANDSCAPE_VARIANTS))
    ls.set_defaults(func=cmd_landscape)

    r = sub.add_parser("report", parents=[common], help="tabulate summaries of finished runs")
    r.add_argument("runs", nargs="+", help="run output directories")
    r.set_defaults(func=cmd_report)
    return ap


def _set_threads(n: Optional[int]) -> None:
    if n is None:
        return
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    if not 1 <= n <= limit:
        raise ConfigError([f"--threads must lie in [1, {limit}] (raise NUMBA_NUM_THREADS for more)"])
    numba.set_num_threads(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except ConfigError as err:
        for p in err.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
