"""Rabi oscillations of an ensemble with a Gaussian spread of detunings.

Cyclic-frequency convention: ``omega`` and detunings are in MHz, times in ns,
and the resonant population fully flips at ``t = 1 / (2 omega)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import find_peaks

from .calibration import CalibrationPolynomial

_MHZ_NS = 1e-3  # MHz * ns -> cycles


@dataclass(frozen=True)
class RabiParameters:
    omega: float
    detuning_sigma: float
    t_grid: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        object.__setattr__(self, "t_grid", t)
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not (math.isfinite(self.detuning_sigma) and self.detuning_sigma >= 0):
            raise ValueError(f"detuning_sigma must be >= 0, got {self.detuning_sigma}")
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise ValueError("t_grid must be a finite 1-D array")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("t_grid must be strictly ascending")


@dataclass
class RabiTrace:
    t_ns: np.ndarray
    signal: np.ndarray


def _flip_probability(t, omega, delta):
    w2 = omega * omega + delta * delta
    return omega * omega / w2 * np.sin(math.pi * np.sqrt(w2) * t * _MHZ_NS) ** 2


def undamped_signal(t, omega: float) -> np.ndarray:
    """Closed form for a single resonant spin."""
    return 1.0 - np.sin(math.pi * omega * np.asarray(t, dtype=float) * _MHZ_NS) ** 2


def rabi_signal(p: RabiParameters) -> RabiTrace:
    """Population of ms=0 after a pulse of each duration in ``p.t_grid``,
    averaged over the detuning distribution by adaptive quadrature."""
    t = p.t_grid
    if p.detuning_sigma == 0:
        return RabiTrace(t.copy(), undamped_signal(t, p.omega))
    s = p.detuning_sigma
    gauss = 1.0 / math.sqrt(2.0 * math.pi)

    def integrand(x):
        return gauss * math.exp(-0.5 * x * x) * _flip_probability(t, p.omega, s * x)

    # symmetric in the detuning: integrate one side and double; all pulse
    # durations share one adaptive subdivision (error controlled in max-norm)
    val, _ = quad_vec(integrand, 0.0, 10.0, epsabs=1e-13, epsrel=1e-11, norm="max", limit=20000)
    out = 1.0 - 2.0 * val
    out[t == 0] = 1.0
    return RabiTrace(t.copy(), np.clip(out, 0.0, 1.0))


def _extrema(t, y):
    """Extrema refined by a parabola through three samples, plus an endpoint
    at the start of the trace when it is itself a turning point. Returns
    times, values and +1/-1 for maxima/minima."""
    found = []
    for sign in (1.0, -1.0):
        idx, _ = find_peaks(sign * y)
        for k in idx:
            a, b, c = y[k - 1], y[k], y[k + 1]
            den = a - 2 * b + c
            h = 0.5 * (a - c) / den if den != 0 else 0.0
            h = max(-0.5, min(0.5, h))
            dt = 0.5 * (t[k + 1] - t[k - 1])
            found.append((t[k] + h * dt, b - 0.25 * (a - c) * h, sign))
    if y.size > 1 and y[1] != y[0]:
        found.append((t[0], y[0], 1.0 if y[0] > y[1] else -1.0))
    found.sort()
    if not found:
        return np.array([]), np.array([]), np.array([])
    arr = np.array(found)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _fit_asymptote(te, ye, se, span):
    """Least-squares ``S_inf + s_k A exp(-t/tau)`` through the extrema;
    returns (S_inf, A, tau) with tau = inf for a non-decaying envelope."""

    def solve(log_tau):
        env = se * np.exp(-(te - te[0]) / math.exp(log_tau))
        a = np.column_stack([np.ones_like(te), env])
        coef, *_ = np.linalg.lstsq(a, ye, rcond=None)
        r = a @ coef - ye
        return float(r @ r), coef

    lo, hi = math.log(span * 1e-4), math.log(span * 1e4)
    grid = np.linspace(lo, hi, 161)
    costs = [solve(g)[0] for g in grid]
    k = int(np.argmin(costs))
    if k == len(grid) - 1:
        cost, coef = solve(hi)
        return float(coef[0]), float(coef[1]), math.inf
    sol = minimize_scalar(lambda g: solve(g)[0], bounds=(grid[max(k - 1, 0)], grid[k + 1]),
                          method="bounded", options={"xatol": 1e-10})
    coef = solve(sol.x)[1]
    return float(coef[0]), float(coef[1]), math.exp(sol.x)


def envelope_decay_time(trace: RabiTrace) -> float:
    """1/e time (ns) of the oscillation envelope.

    The asymptote ``S_inf`` comes from a least-squares fit of
    ``S_inf + s_k A exp(-t/tau)`` to the extrema (``s_k = +1`` at maxima,
    -1 at minima). The envelope ``|S(t_k) - S_inf|`` is then interpolated
    log-linearly between extrema, and the returned time is where it first
    falls to 1/e of its value at the first extremum (extrapolated with the
    fitted rate if the trace ends first). For a pure exponential envelope
    this is exactly ``tau``; for the heavy-tailed Gaussian-detuning average it
    measures the fast initial decay. A non-decaying trace returns
    ``math.inf``; fewer than three extrema raise ``ValueError``.
    """
    t = np.asarray(trace.t_ns, dtype=float)
    y = np.asarray(trace.signal, dtype=float)
    te, ye, se = _extrema(t, y)
    if te.size < 3:
        raise ValueError(f"need at least 3 extrema to fit an envelope, found {te.size}")
    s_inf, _, tau = _fit_asymptote(te, ye, se, float(t[-1] - t[0]))
    amp = np.abs(ye - s_inf)
    if math.isinf(tau) or amp.min() >= amp[0] * (1 - 1e-9):
        return math.inf
    level = amp[0] / math.e
    below = np.nonzero(amp <= level)[0]
    if below.size == 0:
        return float(te[0] + tau)
    k = int(below[0])
    la, lb = math.log(max(amp[k - 1], 1e-300)), math.log(max(amp[k], 1e-300))
    frac = (la - math.log(level)) / (la - lb) if la != lb else 1.0
    return float(te[k - 1] + frac * (te[k] - te[k - 1]) - te[0])


@dataclass(frozen=True)
class PowerLaw:
    exponent: float
    coefficient: float
    intercept: float


def rabi_power_law(points) -> PowerLaw:
    """Log-log regression of Rabi frequency against drive power:
    ``omega = coefficient * power ** exponent``."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("need at least two (power, omega) pairs")
    p, w = arr[:, 0], arr[:, 1]
    if np.any(p <= 0) or np.any(w <= 0):
        raise ValueError("powers and Rabi frequencies must be positive")
    x, y = np.log(p), np.log(w)
    dx = x - x.mean()
    if not np.any(dx):
        raise ValueError("need at least two distinct powers")
    slope = float(dx @ (y - y.mean()) / (dx @ dx))
    icept = float(y.mean() - slope * x.mean())
    return PowerLaw(slope, math.exp(icept), icept)


def estimate_rabi_frequency(trace: RabiTrace) -> float:
    """Dominant oscillation frequency (MHz) from a zero-padded spectrum of the
    mean-subtracted trace; expects a uniform time grid."""
    t = np.asarray(trace.t_ns, dtype=float)
    y = np.asarray(trace.signal, dtype=float)
    if t.size < 4:
        raise ValueError("need at least 4 samples")
    dt = float(np.mean(np.diff(t)))
    n = 16 * int(2 ** math.ceil(math.log2(t.size)))
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(t.size), n))
    k = int(np.argmax(spec[1:])) + 1
    if 0 < k < spec.size - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        den = a - 2 * b + c
        k = k + (0.5 * (a - c) / den if den != 0 else 0.0)
    freq_per_ns = k / (n * dt)
    # the population oscillates at the Rabi frequency itself (sin^2 of pi*omega*t)
    return freq_per_ns / _MHZ_NS


def detuning_sigma_from_pressure(sigma_p: float, dd_dp: float | None = None,
                                 pressure: float | None = None,
                                 cal: CalibrationPolynomial = CalibrationPolynomial()) -> float:
    """Detuning spread (MHz) produced by a pressure spread ``sigma_p`` (GPa):
    ``|dD/dP| * sigma_p``, the slope taken from ``dd_dp`` or else from the
    calibration at ``pressure``."""
    if sigma_p < 0:
        raise ValueError("sigma_p must be >= 0")
    if dd_dp is None:
        if pressure is None:
            raise ValueError("give either dd_dp or pressure")
        dd_dp = cal.slope(pressure)
    return abs(dd_dp) * sigma_p


def default_time_grid(omega: float, t_max: float, per_period: int = 40) -> np.ndarray:
    dt = 1.0 / (omega * _MHZ_NS) / per_period
    return np.arange(0.0, t_max + dt / 2, dt)


def detuning_sigma_for_decay_time(omega: float, target_ns: float, t_max: float | None = None,
                                  per_period: int = 40) -> float:
    """Detuning spread whose quadrature trace has envelope 1/e time
    ``target_ns``; solved by bracketing on the monotone decay time.

    The decay time saturates near 1.4 Rabi periods as the spread grows, so
    targets shorter than that are rejected (``ValueError``)."""
    t_max = t_max if t_max is not None else 6.0 * target_ns
    grid = default_time_grid(omega, t_max, per_period)

    def gap(sig):
        tr = rabi_signal(RabiParameters(omega, sig, grid))
        try:
            return envelope_decay_time(tr) - target_ns
        except ValueError:
            return -target_ns

    lo, hi = omega * 1e-3, omega * 0.05
    while gap(hi) > 0:
        lo, hi = hi, hi * 2
        if hi > 100 * omega:
            raise ValueError(
                f"a {target_ns} ns decay time is out of reach at omega = {omega} MHz; "
                "the envelope cannot decay much faster than 1.4 Rabi periods"
            )
    while gap(lo) < 0:
        lo /= 4
        if lo < omega * 1e-9:
            raise ValueError("decay time target not reachable")
    return brentq(gap, lo, hi, xtol=1e-10 * omega)
