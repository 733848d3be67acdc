"""CSV traces and JSON experiment manifests.

Spectrum CSV: header ``frequency_mhz,contrast``, ascending frequencies in MHz.
Rabi CSV: header ``t_ns,signal``. Floats are written with ``repr`` so that a
write/read cycle reproduces every value bit for bit.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .inversion.core import FIELD_MODES, ExperimentDataset, SpectrumMeta
from .rabi import RabiTrace
from .spectrum import SpectrumTrace

SPECTRUM_HEADER = ("frequency_mhz", "contrast")
RABI_HEADER = ("t_ns", "signal")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _write_columns(path, header, a, b) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(a, b):
            w.writerow((repr(float(x)), repr(float(y))))


def _read_columns(path, header) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    xs, ys = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        first = next(rows, None)
        if first is None or tuple(c.strip() for c in first) != header:
            raise FormatError(f"{path}:1: expected header {','.join(header)!r}, got {first!r}")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise FormatError(f"{path}:{lineno}: non-finite value in {row!r}")
            if xs and x <= xs[-1]:
                raise FormatError(f"{path}:{lineno}: {header[0]} must be strictly ascending")
            xs.append(x)
            ys.append(y)
    return np.array(xs, dtype=float), np.array(ys, dtype=float)


def write_spectrum_csv(path, trace: SpectrumTrace) -> None:
    _write_columns(path, SPECTRUM_HEADER, trace.frequencies, trace.contrast)


def load_spectrum_csv(path) -> SpectrumTrace:
    f, c = _read_columns(path, SPECTRUM_HEADER)
    return SpectrumTrace(f, c)


def write_rabi_csv(path, trace: RabiTrace) -> None:
    _write_columns(path, RABI_HEADER, trace.t_ns, trace.signal)


def load_rabi_csv(path) -> RabiTrace:
    t, s = _read_columns(path, RABI_HEADER)
    return RabiTrace(t, s)


@dataclass
class ManifestEntry:
    path: str
    known_field: tuple[float, float, float] | None = None
    scan_index: int | None = None
    angle_deg: float | None = None


@dataclass
class ExperimentManifest:
    """Spectrum files plus the metadata needed to fit them.

    JSON layout::

        {"spectra": [{"path": "zero.csv", "known_field": [0, 0, 0]},
                     {"path": "b1.csv", "angle_deg": 30.0}, ...],
         "alive_groups": ["[111]", "[-1-11]"],
         "field_mode": "orientation_scan",
         "culet_pressure_gpa": 75.0}

    Paths are relative to the manifest file. ``known_field`` is a crystal
    frame vector in Gauss; omit it (or use null) for fitted fields.
    """

    entries: list[ManifestEntry]
    alive_groups: tuple[str, ...] = ("[111]", "[-1-11]", "[-11-1]", "[1-1-1]")
    field_mode: str = "free"
    culet_pressure: float | None = None
    base_dir: Path = field(default_factory=Path)

    def validate(self) -> None:
        if not self.entries:
            raise FormatError("manifest lists no spectra")
        if self.field_mode not in FIELD_MODES:
            raise FormatError(f"field_mode must be one of {FIELD_MODES}, got {self.field_mode!r}")
        for k, e in enumerate(self.entries):
            p = self.base_dir / e.path
            if not p.is_file():
                raise FormatError(f"spectra[{k}]: file {p} does not exist")
            if e.known_field is None:
                if self.field_mode == "orientation_scan" and e.angle_deg is None:
                    raise FormatError(f"spectra[{k}]: orientation scans need angle_deg per spectrum")
                if self.field_mode == "strength_scan" and e.scan_index is None:
                    raise FormatError(f"spectra[{k}]: strength scans need scan_index per spectrum")

    def to_dataset(self) -> ExperimentDataset:
        self.validate()
        spectra, meta = [], []
        for e in self.entries:
            spectra.append(load_spectrum_csv(self.base_dir / e.path))
            meta.append(SpectrumMeta(e.known_field, e.scan_index, e.angle_deg))
        return ExperimentDataset(spectra, meta, self.alive_groups, self.field_mode, self.culet_pressure)

    def to_dict(self) -> dict:
        out = {
            "spectra": [
                {k: v for k, v in (("path", e.path),
                                   ("known_field", list(e.known_field) if e.known_field is not None else None),
                                   ("scan_index", e.scan_index), ("angle_deg", e.angle_deg))
                 if v is not None or k == "known_field"}
                for e in self.entries
            ],
            "alive_groups": list(self.alive_groups),
            "field_mode": self.field_mode,
        }
        if self.culet_pressure is not None:
            out["culet_pressure_gpa"] = self.culet_pressure
        return out


_ENTRY_KEYS = {"path", "known_field", "scan_index", "angle_deg"}
_MANIFEST_KEYS = {"spectra", "alive_groups", "field_mode", "culet_pressure_gpa"}


def load_manifest(path) -> ExperimentManifest:
    path = Path(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be an object")
    bad = set(data) - _MANIFEST_KEYS
    if bad:
        raise FormatError(f"{path}: unknown keys {sorted(bad)}")
    entries = []
    for k, item in enumerate(data.get("spectra", [])):
        if isinstance(item, str):
            item = {"path": item}
        extra = set(item) - _ENTRY_KEYS
        if extra or "path" not in item:
            raise FormatError(f"{path}: spectra[{k}] needs 'path' and only {sorted(_ENTRY_KEYS)}")
        kf = item.get("known_field")
        if kf is not None:
            if len(kf) != 3:
                raise FormatError(f"{path}: spectra[{k}].known_field must have 3 components")
            kf = tuple(float(v) for v in kf)
        entries.append(ManifestEntry(str(item["path"]), kf, item.get("scan_index"), item.get("angle_deg")))
    m = ExperimentManifest(
        entries,
        tuple(data.get("alive_groups", ExperimentManifest.__dataclass_fields__["alive_groups"].default)),
        data.get("field_mode", "free"),
        data.get("culet_pressure_gpa"),
        path.parent,
    )
    m.validate()
    return m


def save_manifest(manifest: ExperimentManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
