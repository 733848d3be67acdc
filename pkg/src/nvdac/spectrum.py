"""Forward synthesis of ensemble ODMR spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import find_peaks

from .calibration import CalibrationPolynomial
from .lineshape import voigt
from .spin import PhysicalConstants, build_hamiltonians, transition_frequencies_batch
from .stress import (
    ORIENTATION_LABELS,
    SpinStressConstants,
    StressTensor,
    coupling_stack,
    get_orientation,
)

CONTRAST_MAX = 1.05


@dataclass(frozen=True)
class LineShapeParams:
    """``contrast_per_group`` is the summed depth of one orientation family's
    two lines; ``lorentz_width`` is a HWHM in MHz."""

    contrast_per_group: float = 0.07
    lorentz_width: float = 6.0
    baseline: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.contrast_per_group <= 1.0:
            raise ValueError(f"contrast_per_group must lie in [0, 1], got {self.contrast_per_group}")
        if not self.lorentz_width > 0:
            raise ValueError(f"lorentz_width must be positive, got {self.lorentz_width}")


@dataclass(frozen=True)
class BroadeningModel:
    """Gaussian pressure spread ``sigma_p`` (GPa) mapped to a frequency spread
    through ``dd_dp`` (MHz/GPa). ``dd_dp=None`` means: take the calibration
    slope at the scene's hydrostatic pressure."""

    sigma_p: float = 0.0
    dd_dp: float | None = None

    def __post_init__(self):
        if not self.sigma_p >= 0:
            raise ValueError(f"sigma_p must be >= 0, got {self.sigma_p}")

    def gauss_width(self, pressure: float, cal: CalibrationPolynomial) -> float:
        slope = self.dd_dp if self.dd_dp is not None else cal.slope(max(pressure, 0.0))
        return abs(slope) * self.sigma_p


@dataclass
class SpectrumTrace:
    frequencies: np.ndarray
    contrast: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        if self.frequencies.ndim != 1 or self.frequencies.shape != self.contrast.shape:
            raise ValueError("frequencies and contrast must be 1-D arrays of equal length")
        if self.frequencies.size and np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequency grid must be strictly ascending")
        if not np.all(np.isfinite(self.contrast)):
            raise ValueError("contrast contains non-finite values")

    def __len__(self):
        return self.frequencies.size


@dataclass(frozen=True)
class EnsembleScene:
    sigma: StressTensor = field(default_factory=StressTensor)
    b_crystal: tuple[float, float, float] = (0.0, 0.0, 0.0)
    alive_groups: tuple[str, ...] = ORIENTATION_LABELS
    line: LineShapeParams = field(default_factory=LineShapeParams)
    broadening: BroadeningModel = field(default_factory=BroadeningModel)
    group_contrast: Mapping[str, float] | None = None

    def __post_init__(self):
        if not self.alive_groups:
            raise ValueError("alive_groups must not be empty")
        labels = tuple(get_orientation(g).label for g in self.alive_groups)
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate orientation in alive_groups: {self.alive_groups}")
        object.__setattr__(self, "alive_groups", labels)
        b = tuple(float(v) for v in self.b_crystal)
        if len(b) != 3 or not all(math.isfinite(v) for v in b):
            raise ValueError(f"b_crystal must be a finite 3-vector, got {self.b_crystal}")
        object.__setattr__(self, "b_crystal", b)
        total = sum(self.depths_per_group().values())
        if total > self.line.baseline + 1e-12:
            raise ValueError("total dip depth exceeds the baseline")

    def depths_per_group(self) -> dict[str, float]:
        out = {}
        for g in self.alive_groups:
            c = self.line.contrast_per_group
            if self.group_contrast and g in self.group_contrast:
                c = float(self.group_contrast[g])
            out[g] = c
        return out


@dataclass(frozen=True)
class ResonanceLine:
    orientation: str
    f_minus: float
    f_plus: float
    ambiguous: bool = False


def line_positions(
    sigma_vec,
    b_fields,
    labels: Sequence[str],
    constants: PhysicalConstants,
    coupling: SpinStressConstants,
    coupling_mats: np.ndarray | None = None,
    frames: np.ndarray | None = None,
):
    """Transition frequencies for every (field, orientation) pair.

    ``b_fields`` has shape (m, 3) in the crystal frame; ``sigma_vec`` is one
    Voigt 6-vector or an (m, 6) array pairing a stress with each field.
    Returns arrays of shape (m, len(labels), 2) with (f_minus, f_plus) and an
    ambiguity mask (m, n).
    """
    if coupling_mats is None:
        coupling_mats = coupling_stack(labels, coupling)
    if frames is None:
        frames = np.stack([get_orientation(l).frame for l in labels])
    b = np.atleast_2d(np.asarray(b_fields, dtype=float))
    b_nv = np.einsum("gij,mj->mgi", frames, b)  # (m, n, 3)
    m, n = b_nv.shape[:2]
    sig = np.asarray(sigma_vec, dtype=float)
    if sig.ndim == 1:
        terms = np.broadcast_to(coupling_mats @ sig, (m, n, 3))
    else:
        terms = np.einsum("gij,mj->mgi", coupling_mats, sig)
    d = constants.d_ambient + terms[..., 0]
    mx = terms[..., 1]
    my = terms[..., 2]
    h = build_hamiltonians(d.ravel(), mx.ravel(), my.ravel(), b_nv.reshape(-1, 3), constants.gamma_e)
    fm, fp, amb = transition_frequencies_batch(h)
    return np.stack([fm, fp], axis=-1).reshape(m, n, 2), amb.reshape(m, n)


def resonance_lines(
    scene: EnsembleScene,
    constants: PhysicalConstants = PhysicalConstants(),
    coupling: SpinStressConstants = SpinStressConstants(),
) -> list[ResonanceLine]:
    labels = sorted(scene.alive_groups)
    f, amb = line_positions(scene.sigma.as_vector(), [scene.b_crystal], labels, constants, coupling)
    return [
        ResonanceLine(l, float(f[0, i, 0]), float(f[0, i, 1]), bool(amb[0, i]))
        for i, l in enumerate(labels)
    ]


def dip_sum(frequencies, centers, depths, lorentz_width, gauss_width, baseline=1.0) -> np.ndarray:
    """baseline - sum_k depth_k * V(f - center_k)."""
    f = np.asarray(frequencies, dtype=float)
    c = np.asarray(centers, dtype=float).ravel()
    a = np.broadcast_to(np.asarray(depths, dtype=float).ravel() if np.ndim(depths) else depths, c.shape)
    if c.size == 0:
        return np.full_like(f, baseline)
    prof = voigt(f[None, :] - c[:, None], lorentz_width, gauss_width)
    return baseline - a @ prof


def synthesize_spectrum(
    scene: EnsembleScene,
    grid,
    constants: PhysicalConstants = PhysicalConstants(),
    coupling: SpinStressConstants = SpinStressConstants(),
    calibration: CalibrationPolynomial = CalibrationPolynomial(),
) -> SpectrumTrace:
    """Contrast spectrum of the alive orientation families on ``grid`` (MHz).

    Each family contributes two lines of depth ``contrast/2`` so that fully
    overlapping families reach at most ``contrast * n_alive``. If no line
    centre falls inside the grid the trace is a flat baseline flagged
    ``"no_line_in_grid"``.
    """
    grid = np.asarray(grid, dtype=float)
    lines = resonance_lines(scene, constants, coupling)
    depths = scene.depths_per_group()
    centers = np.array([[ln.f_minus, ln.f_plus] for ln in lines])
    amps = np.array([[depths[ln.orientation] / 2] * 2 for ln in lines])
    flags = []
    if any(ln.ambiguous for ln in lines):
        flags.append("ambiguous_basis")
    lo, hi = grid[0], grid[-1]
    if not np.any((centers >= lo) & (centers <= hi)):
        flags.append("no_line_in_grid")
        return SpectrumTrace(grid, np.full_like(grid, scene.line.baseline), tuple(flags))
    gw = scene.broadening.gauss_width(scene.sigma.hydrostatic_pressure, calibration)
    y = dip_sum(grid, centers, amps, scene.line.lorentz_width, gw, scene.line.baseline)
    return SpectrumTrace(grid, y, tuple(flags))


def add_noise(trace: SpectrumTrace, noise_sigma: float, rng: np.random.Generator) -> SpectrumTrace:
    noisy = trace.contrast + rng.normal(0.0, noise_sigma, size=trace.contrast.shape)
    return SpectrumTrace(trace.frequencies, noisy, trace.flags)


def count_resolved_dips(trace: SpectrumTrace, prominence: float) -> int:
    """Number of local minima whose prominence exceeds ``prominence``
    (in contrast units)."""
    if not 0.0 < prominence < 1.0:
        raise ValueError(f"prominence must lie in (0, 1), got {prominence}")
    y = np.asarray(trace.contrast, dtype=float)
    if y.size < 3:
        return 0
    peaks, _ = find_peaks(float(y.max()) - y, prominence=prominence)
    return int(peaks.size)


def scan_plane(label_a: str, label_b: str) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis (e1, e2) of the plane spanned by two NV axes, with
    ``e1`` along the first axis."""
    a = get_orientation(label_a).axis
    b = get_orientation(label_b).axis
    e2 = b - (b @ a) * a
    norm = np.linalg.norm(e2)
    if norm < 1e-12:
        raise ValueError("the two axes must not be parallel")
    return a.copy(), e2 / norm


@dataclass
class OrientationScan:
    angles_deg: np.ndarray
    fields: np.ndarray
    traces: list[SpectrumTrace]
    dip_counts: np.ndarray


def orientation_scan(
    scene: EnsembleScene,
    angles_deg,
    magnitude: float,
    grid,
    plane: tuple[np.ndarray, np.ndarray] | None = None,
    prominence: float = 0.003,
    constants: PhysicalConstants = PhysicalConstants(),
    coupling: SpinStressConstants = SpinStressConstants(),
    calibration: CalibrationPolynomial = CalibrationPolynomial(),
) -> OrientationScan:
    """Spectra for a field of fixed ``magnitude`` (G) rotated in a plane.

    The field at angle ``t`` is ``magnitude (cos t e1 + sin t e2)``; the
    plane defaults to the one spanned by the first two alive axes, angles
    measured from the first. ``scene.b_crystal`` is ignored.
    """
    if plane is None:
        if len(scene.alive_groups) < 2:
            raise ValueError("default scan plane needs two alive groups; pass plane=")
        plane = scan_plane(scene.alive_groups[0], scene.alive_groups[1])
    e1, e2 = (np.asarray(v, dtype=float) for v in plane)
    angles = np.asarray(angles_deg, dtype=float)
    t = np.radians(angles)
    fields = magnitude * (np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2)
    traces, counts = [], []
    for b in fields:
        sc = EnsembleScene(scene.sigma, tuple(b), scene.alive_groups, scene.line,
                           scene.broadening, scene.group_contrast)
        tr = synthesize_spectrum(sc, grid, constants, coupling, calibration)
        traces.append(tr)
        counts.append(count_resolved_dips(tr, prominence))
    return OrientationScan(angles, fields, traces, np.array(counts, dtype=int))
