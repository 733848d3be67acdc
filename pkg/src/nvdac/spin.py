"""Spin-1 operators, the NV ground-state Hamiltonian and its transition frequencies.

All energies are cyclic frequencies in MHz, magnetic fields in Gauss. The
basis ordering is ``|ms=+1>, |ms=0>, |ms=-1>``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)

#: index of |ms=0> in the basis
MS0 = 1

HERMITIAN_RTOL = 1e-12
AMBIGUITY_TOL = 1e-9


class AmbiguousBasisWarning(UserWarning):
    """Two eigenvectors share the largest |ms=0> weight."""


@dataclass(frozen=True)
class SpinMatrices:
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray


def spin_matrices() -> SpinMatrices:
    sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / SQRT2
    sy = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / SQRT2
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return SpinMatrices(sx, sy, sz)


_S = spin_matrices()
SX, SY, SZ = _S.sx, _S.sy, _S.sz
SZ2 = SZ @ SZ
# the two quadrupole operators coupling to transverse stress
QX = SY @ SY - SX @ SX
QY = SX @ SY + SY @ SX


@dataclass(frozen=True)
class PhysicalConstants:
    """Gyromagnetic ratio (MHz/G) and ambient zero-field splitting (MHz)."""

    gamma_e: float = 2.8025
    d_ambient: float = 2870.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma_e) and self.gamma_e > 0):
            raise ValueError(f"gamma_e must be positive and finite, got {self.gamma_e}")
        if not math.isfinite(self.d_ambient):
            raise ValueError(f"d_ambient must be finite, got {self.d_ambient}")


@dataclass(frozen=True)
class SpinTerms:
    """Axial term ``d_eff`` (ambient splitting plus stress shift) and the two
    transverse stress terms, all in MHz."""

    d_eff: float
    mx: float = 0.0
    my: float = 0.0

    @property
    def e(self) -> float:
        return math.hypot(self.mx, self.my)


@dataclass(frozen=True)
class Transitions:
    f_minus: float
    f_plus: float
    ambiguous: bool = False


def _check_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite value in {name}: {value!r}")


def build_hamiltonian(
    terms: SpinTerms, b_nv, constants: PhysicalConstants = PhysicalConstants()
) -> np.ndarray:
    """H = D Sz^2 + Mx (Sy^2 - Sx^2) + My (SxSy + SySx) + gamma_e B.S, with B
    given in the NV frame."""
    _check_finite("terms.d_eff", terms.d_eff)
    _check_finite("terms.mx", terms.mx)
    _check_finite("terms.my", terms.my)
    b = np.asarray(b_nv, dtype=float)
    if b.shape != (3,):
        raise ValueError(f"b_nv must be a 3-vector, got shape {b.shape}")
    _check_finite("b_nv", b)
    g = constants.gamma_e
    return (
        terms.d_eff * SZ2
        + terms.mx * QX
        + terms.my * QY
        + g * (b[0] * SX + b[1] * SY + b[2] * SZ)
    )


def build_hamiltonians(d_eff, mx, my, b_nv, gamma_e: float) -> np.ndarray:
    """Vectorised form of :func:`build_hamiltonian` for stacks of inputs.

    ``d_eff``, ``mx``, ``my`` broadcast to shape ``(n,)`` and ``b_nv`` has
    shape ``(n, 3)``. No validation; used in the fitting inner loop.
    """
    d_eff = np.asarray(d_eff, dtype=float)[..., None, None]
    mx = np.asarray(mx, dtype=float)[..., None, None]
    my = np.asarray(my, dtype=float)[..., None, None]
    b = np.asarray(b_nv, dtype=float)
    bx, by, bz = (b[..., i, None, None] for i in range(3))
    return d_eff * SZ2 + mx * QX + my * QY + gamma_e * (bx * SX + by * SY + bz * SZ)


def _check_hermitian(h: np.ndarray) -> None:
    scale = max(float(np.max(np.abs(h))), 1.0)
    dev = float(np.max(np.abs(h - np.swapaxes(h.conj(), -1, -2))))
    if dev > HERMITIAN_RTOL * scale:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3g})")


def eig3_hermitian(h) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
    Hermitian 3x3 matrix, or of a stack of them."""
    h = np.asarray(h, dtype=complex)
    if h.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrix, got {h.shape}")
    _check_hermitian(h)
    return np.linalg.eigh(h)


def _pick_transitions(w: np.ndarray, v: np.ndarray):
    """Transition frequencies out of the ms=0-like state for stacked eigh output.

    Returns (f_minus, f_plus, ambiguous) arrays.
    """
    weight = np.abs(v[..., MS0, :]) ** 2
    order = np.argsort(-weight, axis=-1, kind="stable")
    top = np.take_along_axis(weight, order[..., :2], axis=-1)
    ambiguous = (top[..., 0] - top[..., 1]) <= AMBIGUITY_TOL
    # at a tie the stable sort keeps the lower index first
    k0 = order[..., 0]
    e0 = np.take_along_axis(w, k0[..., None], axis=-1)[..., 0]
    idx = np.arange(3)
    others = np.where(idx == k0[..., None], np.inf, w)
    others = np.sort(others, axis=-1)[..., :2]
    f = np.abs(others - e0[..., None])
    f.sort(axis=-1)
    return f[..., 0], f[..., 1], ambiguous


def transition_frequencies(h) -> Transitions:
    """The two ms=0 -> ms=+-1 transition frequencies, ascending.

    The ms=0-like eigenstate is the one with the largest weight on |ms=0>;
    an exact tie picks the lower-index eigenvector, sets ``ambiguous`` and
    emits :class:`AmbiguousBasisWarning`.
    """
    w, v = eig3_hermitian(h)
    fm, fp, amb = _pick_transitions(w, v)
    if amb:
        warnings.warn("two eigenvectors tie for the largest |ms=0> weight; picked the lower index",
                      AmbiguousBasisWarning, stacklevel=2)
    return Transitions(float(fm), float(fp), bool(amb))


def transition_frequencies_batch(h: np.ndarray):
    """Unvalidated batch version; returns (f_minus, f_plus, ambiguous) arrays."""
    w, v = np.linalg.eigh(h)
    return _pick_transitions(w, v)
