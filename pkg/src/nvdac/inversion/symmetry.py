"""Exact symmetries of the ensemble model.

Every cubic point-group operation ``R`` (48 signed permutation matrices)
maps the four NV axes onto themselves up to sign, so the stress/field pair
``(R sigma R^T, R B)`` produces the same set of spectra as ``(sigma, B)``;
reversing all fields changes nothing either. A recovered solution can only
be compared with its truth modulo these operations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..stress import StressTensor


def cubic_operations() -> list[np.ndarray]:
    ops = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            r = np.zeros((3, 3))
            for i, p in enumerate(perm):
                r[p, i] = signs[i]
            ops.append(r)
    return ops


def transform_stress(sigma, r: np.ndarray) -> np.ndarray:
    m = StressTensor.from_vector(sigma).as_matrix()
    return StressTensor.from_matrix(r @ m @ r.T).as_vector()


@dataclass
class SymmetryMatch:
    operation: np.ndarray
    stress_error: np.ndarray  # per component, GPa
    field_errors: np.ndarray  # per spectrum, Gauss (norm of the difference)

    @property
    def max_stress_error(self) -> float:
        return float(np.max(np.abs(self.stress_error)))

    @property
    def max_field_error(self) -> float:
        return float(np.max(self.field_errors)) if self.field_errors.size else 0.0


def match_modulo_symmetry(sigma_fit, b_fit, sigma_true, b_true) -> SymmetryMatch:
    """Image of the truth closest to the fit.

    Each field may additionally be reversed on its own: a single spectrum
    cannot tell ``B`` from ``-B``.
    """
    sigma_fit = np.asarray(sigma_fit, dtype=float)
    b_fit = np.atleast_2d(np.asarray(b_fit, dtype=float))
    b_true = np.atleast_2d(np.asarray(b_true, dtype=float))
    best = None
    for r in cubic_operations():
        ds = sigma_fit - transform_stress(sigma_true, r)
        bt = b_true @ r.T
        db = np.minimum(np.linalg.norm(b_fit - bt, axis=1), np.linalg.norm(b_fit + bt, axis=1))
        key = (np.max(np.abs(ds)) + 0.5 * (np.max(db) if db.size else 0.0))
        if best is None or key < best[0]:
            best = (key, SymmetryMatch(r, ds, db))
    return best[1]
