"""Deterministic JSON run reports."""
from __future__ import annotations

import datetime as _dt
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .config import ToolkitConfig

VOLATILE_KEYS = ("generated_at",)


def _plain(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to
    strings (JSON has no inf/nan)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else "-inf" if obj < 0 else "nan"
    if isinstance(obj, Path):
        return str(obj)
    return obj


def build_report(command: str, result: dict, config: ToolkitConfig, seed: int | None = None,
                 inputs: dict | None = None, status: str = "ok") -> dict:
    return _plain({
        "command": command,
        "status": status,
        "toolkit_version": __version__,
        "seed": seed,
        "inputs": inputs or {},
        "config": config.to_dict(),
        "result": result,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    })


def dumps(report: dict) -> str:
    return json.dumps(_plain(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(path, report: dict) -> None:
    Path(path).write_text(dumps(report))


def strip_volatile(report: dict) -> dict:
    """Copy without the fields that legitimately differ between runs."""
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}
