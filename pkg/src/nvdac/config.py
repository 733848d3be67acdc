"""Toolkit configuration: physical constants, coupling, calibration, defaults."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .calibration import CalibrationPolynomial
from .spectrum import LineShapeParams
from .spin import PhysicalConstants
from .stress import SpinStressConstants


@dataclass(frozen=True)
class FitOptions:
    """Levenberg-Marquardt controls.

    ``jacobian`` is ``"chain"`` (differences of line positions combined with
    the analytic line-shape derivative), ``"central"`` or ``"forward"``
    (whole-spectrum finite differences). ``exact_lineshape`` evaluates the
    Voigt profile directly instead of through its interpolation table, which
    makes finite differences of the model smooth to rounding level.
    """

    max_iter: int = 200
    gtol: float = 1e-8
    xtol: float = 1e-10
    damping_init: float = 1e-3
    damping_ceiling: float = 1e12
    fd_rel_step: float = 1e-6
    fd_abs_step: float = 1e-9
    jacobian: str = "chain"
    exact_lineshape: bool = False


@dataclass(frozen=True)
class ToolkitConfig:
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    coupling: SpinStressConstants = field(default_factory=SpinStressConstants)
    calibration: CalibrationPolynomial = field(default_factory=CalibrationPolynomial)
    line: LineShapeParams = field(default_factory=LineShapeParams)
    sigma_p: float = 0.5
    fit: FitOptions = field(default_factory=FitOptions)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ToolkitConfig":
        sections = {
            "constants": PhysicalConstants,
            "coupling": SpinStressConstants,
            "calibration": CalibrationPolynomial,
            "line": LineShapeParams,
            "fit": FitOptions,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                sec = sections[key]
                allowed = {f.name for f in fields(sec)}
                bad = set(value) - allowed
                if bad:
                    raise ValueError(f"unknown keys in config section {key!r}: {sorted(bad)}")
                kwargs[key] = sec(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def with_overrides(self, **sections) -> "ToolkitConfig":
        """Replace individual fields inside sections, e.g.
        ``with_overrides(calibration={"d0": 2870.0})``."""
        cfg = self
        for key, value in sections.items():
            if isinstance(value, dict):
                cfg = replace(cfg, **{key: replace(getattr(cfg, key), **value)})
            else:
                cfg = replace(cfg, **{key: value})
        return cfg


DEFAULT_CONFIG = ToolkitConfig()


def load_config(path: str | Path | None) -> ToolkitConfig:
    if path is None:
        return DEFAULT_CONFIG
    with open(path) as fh:
        return ToolkitConfig.from_dict(json.load(fh))


def save_config(cfg: ToolkitConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
