"""Crystal-frame stress and its coupling to the four NV orientation families.

Stress is compressive-positive, in GPa, referred to the cubic crystal axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT3 = math.sqrt(3.0)

STRESS_FIELDS = ("sxx", "syy", "szz", "sxy", "sxz", "syz")


@dataclass(frozen=True)
class StressTensor:
    sxx: float = 0.0
    syy: float = 0.0
    szz: float = 0.0
    sxy: float = 0.0
    sxz: float = 0.0
    syz: float = 0.0

    def __post_init__(self):
        for name in STRESS_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"stress component {name} is not finite")

    @classmethod
    def hydrostatic(cls, p: float) -> "StressTensor":
        return cls(p, p, p, 0.0, 0.0, 0.0)

    @classmethod
    def from_vector(cls, v) -> "StressTensor":
        v = [float(x) for x in v]
        if len(v) != 6:
            raise ValueError("stress vector needs six components (sxx, syy, szz, sxy, sxz, syz)")
        return cls(*v)

    @classmethod
    def from_matrix(cls, m) -> "StressTensor":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2])

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STRESS_FIELDS])

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.sxx, self.sxy, self.sxz],
                [self.sxy, self.syy, self.syz],
                [self.sxz, self.syz, self.szz],
            ]
        )

    @property
    def hydrostatic_pressure(self) -> float:
        return hydrostatic_pressure(self)


@dataclass(frozen=True)
class SpinStressConstants:
    """Spin-stress coupling coefficients in MHz/GPa."""

    a1: float = 4.86
    a2: float = -3.7
    b: float = -2.3
    c: float = 3.5


@dataclass(frozen=True)
class SpinStressTerms:
    mz: float
    mx: float
    my: float


@dataclass(frozen=True)
class NVOrientation:
    label: str
    signs: tuple[int, int, int]
    axis: np.ndarray
    x_local: np.ndarray
    y_local: np.ndarray

    @property
    def frame(self) -> np.ndarray:
        """Rows are (x_local, y_local, axis)."""
        return np.vstack([self.x_local, self.y_local, self.axis])


def _make_orientation(label: str, signs) -> NVOrientation:
    n = np.asarray(signs, dtype=float)
    # diag(n) has determinant +1, so mapping the [111] frame through it keeps
    # the frame right-handed
    axis = n * np.array([1.0, 1.0, 1.0]) / SQRT3
    x = n * np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)
    y = n * np.array([-1.0, 1.0, 0.0]) / math.sqrt(2.0)
    return NVOrientation(label, tuple(int(s) for s in signs), axis, x, y)


ORIENTATIONS: dict[str, NVOrientation] = {
    o.label: o
    for o in (
        _make_orientation("[111]", (1, 1, 1)),
        _make_orientation("[-1-11]", (-1, -1, 1)),
        _make_orientation("[-11-1]", (-1, 1, -1)),
        _make_orientation("[1-1-1]", (1, -1, -1)),
    )
}
ORIENTATION_LABELS = tuple(ORIENTATIONS)


def get_orientation(label: str) -> NVOrientation:
    """Look up an orientation family; brackets are optional (``"-1-11"``)."""
    key = label.strip()
    if not key.startswith("["):
        key = f"[{key}]"
    try:
        return ORIENTATIONS[key]
    except KeyError:
        raise ValueError(
            f"unknown NV orientation {label!r}; expected one of {', '.join(ORIENTATION_LABELS)}"
        ) from None


def coupling_matrix(orient: NVOrientation, k: SpinStressConstants) -> np.ndarray:
    """3x6 matrix mapping the stress vector (sxx, syy, szz, sxy, sxz, syz) to
    (Mz, Mx, My) for one orientation."""
    n1, n2, n3 = orient.signs
    pxy, pxz, pyz = n1 * n2, n1 * n3, n2 * n3
    return np.array(
        [
            [k.a1, k.a1, k.a1, 2 * k.a2 * pxy, 2 * k.a2 * pxz, 2 * k.a2 * pyz],
            [-k.b, -k.b, 2 * k.b, 2 * k.c * pxy, -k.c * pxz, -k.c * pyz],
            [SQRT3 * k.b, -SQRT3 * k.b, 0.0, 0.0, -SQRT3 * k.c * pxz, SQRT3 * k.c * pyz],
        ]
    )


def coupling_stack(labels, k: SpinStressConstants) -> np.ndarray:
    """Stacked coupling matrices, shape (len(labels), 3, 6)."""
    return np.stack([coupling_matrix(get_orientation(l), k) for l in labels])


def spin_stress_terms(
    sigma: StressTensor, orient: NVOrientation, k: SpinStressConstants = SpinStressConstants()
) -> SpinStressTerms:
    mz, mx, my = coupling_matrix(orient, k) @ sigma.as_vector()
    return SpinStressTerms(float(mz), float(mx), float(my))


def rotate_to_nv_frame(v, orient: NVOrientation) -> np.ndarray:
    """Components of a crystal-frame vector along (x_local, y_local, axis)."""
    return orient.frame @ np.asarray(v, dtype=float)


def rotate_from_nv_frame(v, orient: NVOrientation) -> np.ndarray:
    return orient.frame.T @ np.asarray(v, dtype=float)


def hydrostatic_pressure(sigma: StressTensor) -> float:
    return (sigma.sxx + sigma.syy + sigma.szz) / 3.0


def effective_transverse_splitting(terms: SpinStressTerms) -> float:
    return math.hypot(terms.mx, terms.my)
