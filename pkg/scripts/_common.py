"""Shared helpers for the experiment scripts: locate presets and call the CLI."""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
PRESETS = ROOT / "presets"
sys.path.insert(0, str(ROOT / "src"))

from lbasim.cli import main as cli  # noqa: E402


def preset(name: str) -> str:
    return str(PRESETS / f"{name}.json")


def run(*argv: str) -> None:
    rc = cli(list(argv))
    if rc != 0:
        raise SystemExit(rc)


def summary(out: Path) -> dict:
    return json.loads((out / "summary.json").read_text())
