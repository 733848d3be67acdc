"""Empirical D(P) calibration polynomial and zero-field-splitting extraction."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .lineshape import voigt, voigt_fwhm


class CalibrationRangeWarning(UserWarning):
    """Pressure beyond the polynomial's validated domain."""


class NoDipError(ValueError):
    """No resonance dip above the prominence floor."""


@dataclass(frozen=True)
class CalibrationPolynomial:
    """D = d0 + a1_poly P + a2_poly P^2 with D in MHz and P in GPa.

    Defaults are the empirical fit over five microdiamonds (D0 = 2.88 GHz,
    A1 = 14.8 MHz/GPa, A2 = -27 kHz/GPa^2) with their one-sigma errors.
    """

    d0: float = 2880.0
    a1_poly: float = 14.8
    a2_poly: float = -0.027
    valid_max_p: float = 146.2
    d0_err: float = 30.0
    a1_err: float = 1.0
    a2_err: float = 0.007

    @property
    def vertex_pressure(self) -> float:
        if self.a2_poly >= 0:
            return math.inf
        return -self.a1_poly / (2.0 * self.a2_poly)

    @property
    def vertex_d(self) -> float:
        pv = self.vertex_pressure
        return math.inf if math.isinf(pv) else self.d0 + self.a1_poly * pv + self.a2_poly * pv * pv

    def slope(self, p: float) -> float:
        """dD/dP in MHz/GPa."""
        return self.a1_poly + 2.0 * self.a2_poly * p


def d_from_pressure(p: float, cal: CalibrationPolynomial = CalibrationPolynomial()) -> float:
    if not math.isfinite(p):
        raise ValueError(f"pressure must be finite, got {p}")
    if p < 0:
        raise ValueError(f"negative pressure {p} GPa is outside the calibration")
    if p > cal.valid_max_p:
        warnings.warn(
            f"{p} GPa exceeds the calibrated range (<= {cal.valid_max_p} GPa)",
            CalibrationRangeWarning,
            stacklevel=2,
        )
    return cal.d0 + cal.a1_poly * p + cal.a2_poly * p * p


def pressure_from_d(d: float, cal: CalibrationPolynomial = CalibrationPolynomial()) -> tuple[float, float]:
    """Invert the calibration on its monotone branch.

    Returns ``(pressure, uncertainty)`` in GPa; the uncertainty is first-order
    propagation of the coefficient errors through the implicit root.
    """
    if not math.isfinite(d):
        raise ValueError(f"D must be finite, got {d}")
    if d < cal.d0:
        raise ValueError(f"D = {d} MHz is below d0 = {cal.d0} MHz (out of range)")
    if d > cal.vertex_d:
        raise ValueError(
            f"D = {d} MHz exceeds the polynomial maximum {cal.vertex_d:.3f} MHz "
            f"(vertex at {cal.vertex_pressure:.2f} GPa); no real solution"
        )
    c = cal.d0 - d
    disc = max(cal.a1_poly * cal.a1_poly - 4.0 * cal.a2_poly * c, 0.0)
    # root of a2 p^2 + a1 p + c on the rising branch, cancellation-free form
    denom = cal.a1_poly + math.sqrt(disc)
    p = -2.0 * c / denom if denom != 0 else cal.vertex_pressure
    if p > cal.valid_max_p + 1e-9:
        warnings.warn(
            f"inferred pressure {p:.2f} GPa exceeds the calibrated range",
            CalibrationRangeWarning,
            stacklevel=2,
        )
    s = cal.slope(p)
    var = cal.d0_err**2 + (p * cal.a1_err) ** 2 + (p * p * cal.a2_err) ** 2
    dp = math.sqrt(var) / abs(s) if s != 0 else math.inf
    return p, dp


@dataclass
class DipFit:
    d: float
    e: float
    centers: tuple[float, ...]
    lorentz_width: float
    gauss_width: float
    fwhm: float
    depths: tuple[float, ...]
    baseline: float
    rss: float
    reduced_chi2: float
    n_dips: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def contrast(self) -> float:
        return float(max(self.depths))


def _dip_model(f, centers, depths, gamma, sigma, baseline):
    out = np.full_like(f, baseline)
    for c, a in zip(centers, depths):
        out -= a * voigt(f - c, gamma, sigma)
    return out


def _fit_dips(f, y, centers0, depth0, gamma0, base0):
    n = len(centers0)
    span = float(f[-1] - f[0])
    step = float(np.median(np.diff(f)))
    # x = [baseline, gamma, sigma, centers..., depths...]
    x0 = np.concatenate([[base0, gamma0, gamma0 * 0.5], centers0, [depth0] * n])
    lo = np.concatenate([[-np.inf, step * 0.05, 0.0], [f[0]] * n, [0.0] * n])
    hi = np.concatenate([[np.inf, span, span], [f[-1]] * n, [2.0] * n])
    x0 = np.clip(x0, lo + 1e-12, hi - 1e-12)

    def resid(x):
        return _dip_model(f, x[3 : 3 + n], x[3 + n :], x[1], x[2], x[0]) - y

    sol = least_squares(resid, x0, bounds=(lo, hi), x_scale="jac", max_nfev=400 * (2 * n + 3))
    return sol


def extract_d_and_e(trace, prominence: float = 0.02) -> DipFit:
    """Fit one- and two-dip Voigt models and read off D and E.

    The two-dip model is kept only when it lowers the residual sum of squares
    by at least 10% and its centres are more than a quarter linewidth apart;
    otherwise the single-dip model wins. D is the dip (pair) centre and E half
    the pair separation.
    """
    f = np.asarray(trace.frequencies, dtype=float)
    y = np.asarray(trace.contrast, dtype=float)
    base0 = float(np.percentile(y, 90))
    inv = base0 - y
    peaks, props = find_peaks(inv, prominence=prominence)
    if peaks.size == 0:
        raise NoDipError(f"no dip with prominence >= {prominence} found")
    order = np.argsort(props["prominences"])[::-1]
    peaks = peaks[order]
    depth0 = float(inv[peaks[0]])
    # half width at half depth of the strongest dip as a starting width
    k = peaks[0]
    half = depth0 / 2
    lo_i = k
    while lo_i > 0 and inv[lo_i] > half:
        lo_i -= 1
    hi_i = k
    while hi_i < len(f) - 1 and inv[hi_i] > half:
        hi_i += 1
    gamma0 = max(0.5 * (f[hi_i] - f[lo_i]) / 2, float(np.median(np.diff(f))))

    single = _fit_dips(f, y, [f[peaks[0]]], depth0, gamma0, base0)
    if peaks.size >= 2:
        c2 = sorted([f[peaks[0]], f[peaks[1]]])
    else:
        c2 = [f[peaks[0]] - gamma0, f[peaks[0]] + gamma0]
    double = _fit_dips(f, y, c2, depth0, gamma0, base0)

    rss1 = 2 * single.cost
    rss2 = 2 * double.cost
    g2, s2 = double.x[1], double.x[2]
    fw2 = voigt_fwhm(g2, s2)
    centers2 = np.sort(double.x[3:5])
    use_two = rss2 <= 0.9 * rss1 and (centers2[1] - centers2[0]) > 0.25 * fw2
    sol, n = (double, 2) if use_two else (single, 1)
    centers = np.sort(sol.x[3 : 3 + n])
    gamma, sigma = float(sol.x[1]), float(sol.x[2])
    rss = 2 * sol.cost
    dof = max(len(f) - len(sol.x), 1)
    d = float(np.mean(centers))
    e = float((centers[-1] - centers[0]) / 2) if n == 2 else 0.0
    return DipFit(
        d=d,
        e=e,
        centers=tuple(float(c) for c in centers),
        lorentz_width=gamma,
        gauss_width=sigma,
        fwhm=voigt_fwhm(gamma, sigma),
        depths=tuple(float(a) for a in sol.x[3 + n :]),
        baseline=float(sol.x[0]),
        rss=float(rss),
        reduced_chi2=float(rss / dof),
        n_dips=n,
        converged=bool(sol.success),
        diagnostics={"status": int(sol.status), "message": sol.message,
                     "rss_single": float(rss1), "rss_double": float(rss2), "nfev": int(sol.nfev)},
    )
