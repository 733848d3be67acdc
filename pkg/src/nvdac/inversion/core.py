"""Global least-squares recovery of the stress tensor and field vectors from
a series of ODMR spectra."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..calibration import pressure_from_d
from ..config import DEFAULT_CONFIG, FitOptions, ToolkitConfig
from ..lineshape import voigt, voigt_derivative
from ..spectrum import SpectrumTrace, line_positions
from ..stress import STRESS_FIELDS, StressTensor, coupling_stack, get_orientation

log = logging.getLogger(__name__)

FIELD_MODES = ("free", "orientation_scan", "strength_scan")

# internal nondimensionalisation
_SCALE = {
    "sigma": 10.0,  # GPa
    "b": 100.0,  # Gauss
    "angle": 1.0,  # rad
    "baseline": 0.01,
    "contrast": 0.01,
    "lorentz_width": 10.0,  # MHz
    "sigma_p": 1.0,  # GPa
}


@dataclass(frozen=True)
class SpectrumMeta:
    """Per-spectrum metadata.

    ``known_field`` is the crystal-frame field in Gauss when it is known
    (``(0, 0, 0)`` for a zero-field spectrum) and ``None`` when it is fitted.
    """

    known_field: tuple[float, float, float] | None = None
    scan_index: int | None = None
    angle_deg: float | None = None

    @classmethod
    def zero_field(cls, **kw) -> "SpectrumMeta":
        return cls(known_field=(0.0, 0.0, 0.0), **kw)


class IdentifiabilityWarning(UserWarning):
    """The data cannot constrain every free parameter."""


@dataclass
class ExperimentDataset:
    spectra: list[SpectrumTrace]
    meta: list[SpectrumMeta]
    alive_groups: tuple[str, ...] = ("[111]", "[-1-11]", "[-11-1]", "[1-1-1]")
    field_mode: str = "free"
    culet_pressure: float | None = None

    def __post_init__(self):
        if not self.spectra:
            raise ValueError("dataset needs at least one spectrum")
        if len(self.meta) != len(self.spectra):
            raise ValueError("one metadata entry per spectrum is required")
        if self.field_mode not in FIELD_MODES:
            raise ValueError(f"field_mode must be one of {FIELD_MODES}, got {self.field_mode!r}")
        self.alive_groups = tuple(get_orientation(g).label for g in self.alive_groups)
        if not self.alive_groups:
            raise ValueError("alive_groups must not be empty")

    @property
    def n_points(self) -> int:
        return sum(len(s) for s in self.spectra)

    @property
    def unknown(self) -> list[int]:
        return [i for i, m in enumerate(self.meta) if m.known_field is None]

    def subset(self, indices: Sequence[int]) -> "ExperimentDataset":
        return replace(
            self,
            spectra=[self.spectra[i] for i in indices],
            meta=[self.meta[i] for i in indices],
        )


@dataclass
class FitParameters:
    sigma: np.ndarray
    b_fields: np.ndarray
    baselines: np.ndarray
    contrast: float
    lorentz_width: float
    sigma_p: float

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(6)
        self.b_fields = np.asarray(self.b_fields, dtype=float).reshape(-1, 3)
        self.baselines = np.asarray(self.baselines, dtype=float).reshape(-1)
        if self.b_fields.shape[0] != self.baselines.shape[0]:
            raise ValueError("b_fields and baselines must have one entry per spectrum")

    @property
    def stress(self) -> StressTensor:
        return StressTensor.from_vector(self.sigma)

    def copy(self) -> "FitParameters":
        return FitParameters(self.sigma.copy(), self.b_fields.copy(), self.baselines.copy(),
                             self.contrast, self.lorentz_width, self.sigma_p)

    def to_dict(self) -> dict:
        return {
            "sigma_gpa": dict(zip(STRESS_FIELDS, map(float, self.sigma))),
            "b_fields_gauss": [list(map(float, b)) for b in self.b_fields],
            "baselines": list(map(float, self.baselines)),
            "contrast_per_group": float(self.contrast),
            "lorentz_width_mhz": float(self.lorentz_width),
            "sigma_p_gpa": float(self.sigma_p),
        }


def _unit(theta, phi):
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def _angles(v):
    r = float(np.linalg.norm(v))
    if r == 0:
        return 0.0, 0.0
    # atan2 form stays accurate near the poles, where acos(z / r) does not
    return math.atan2(math.hypot(v[0], v[1]), v[2]), math.atan2(v[1], v[0])


class ParameterLayout:
    """Maps :class:`FitParameters` to and from a flat vector for one dataset.

    Every parameter has a name, a scale used to nondimensionalise the
    optimisation, and the set of spectra it affects (``None`` = all).
    """

    def __init__(self, dataset: ExperimentDataset):
        self.dataset = dataset
        self.mode = dataset.field_mode
        self.m = len(dataset.spectra)
        self.unknown = dataset.unknown
        names, scales, affects = [], [], []

        def add(name, scale, aff):
            names.append(name)
            scales.append(scale)
            affects.append(aff)

        for n in STRESS_FIELDS:
            add(f"sigma.{n}", _SCALE["sigma"], None)
        unk = self.unknown
        if self.mode == "free":
            for i in unk:
                for ax in "xyz":
                    add(f"b[{i}].{ax}", _SCALE["b"], frozenset([i]))
        elif self.mode == "orientation_scan":
            if unk:
                add("b.magnitude", _SCALE["b"], frozenset(unk))
            for i in unk:
                add(f"b[{i}].theta", _SCALE["angle"], frozenset([i]))
                add(f"b[{i}].phi", _SCALE["angle"], frozenset([i]))
        else:
            if unk:
                add("b.theta", _SCALE["angle"], frozenset(unk))
                add("b.phi", _SCALE["angle"], frozenset(unk))
            for i in unk:
                add(f"b[{i}].magnitude", _SCALE["b"], frozenset([i]))
        for i in range(self.m):
            add(f"baseline[{i}]", _SCALE["baseline"], frozenset([i]))
        add("contrast", _SCALE["contrast"], None)
        add("lorentz_width", _SCALE["lorentz_width"], None)
        add("sigma_p", _SCALE["sigma_p"], None)
        self.names = names
        self.scales = np.array(scales)
        self.affects = affects
        self.index = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def pack(self, p: FitParameters) -> np.ndarray:
        x = np.zeros(len(self))
        x[:6] = p.sigma
        k = 6
        unk = self.unknown
        if self.mode == "free":
            for i in unk:
                x[k : k + 3] = p.b_fields[i]
                k += 3
        elif self.mode == "orientation_scan":
            if unk:
                x[k] = np.linalg.norm(p.b_fields[unk[0]])
                k += 1
            for i in unk:
                x[k : k + 2] = _angles(p.b_fields[i])
                k += 2
        else:
            if unk:
                ref = next((p.b_fields[i] for i in unk if np.linalg.norm(p.b_fields[i]) > 0),
                           np.array([0.0, 0.0, 1.0]))
                th, ph = _angles(ref)
                x[k : k + 2] = th, ph
                k += 2
                u = _unit(th, ph)
                for i in unk:
                    x[k] = float(p.b_fields[i] @ u)
                    k += 1
        x[k : k + self.m] = p.baselines
        k += self.m
        x[k : k + 3] = p.contrast, p.lorentz_width, p.sigma_p
        return x

    def unpack(self, x) -> FitParameters:
        x = np.asarray(x, dtype=float)
        b = np.zeros((self.m, 3))
        for i, meta in enumerate(self.dataset.meta):
            if meta.known_field is not None:
                b[i] = meta.known_field
        k = 6
        unk = self.unknown
        if self.mode == "free":
            for i in unk:
                b[i] = x[k : k + 3]
                k += 3
        elif self.mode == "orientation_scan":
            if unk:
                mag = x[k]
                k += 1
                for i in unk:
                    b[i] = mag * _unit(x[k], x[k + 1])
                    k += 2
        else:
            if unk:
                u = _unit(x[k], x[k + 1])
                k += 2
                for i in unk:
                    b[i] = x[k] * u
                    k += 1
        baselines = x[k : k + self.m].copy()
        k += self.m
        return FitParameters(x[:6].copy(), b, baselines, float(x[k]), float(x[k + 1]), float(x[k + 2]))


def _gauss_width(p: FitParameters, cfg: ToolkitConfig) -> float:
    pressure = float(np.sum(p.sigma[:3])) / 3.0
    return abs(cfg.calibration.slope(max(pressure, 0.0))) * abs(p.sigma_p)


class ForwardModel:
    """Cached forward evaluation of every spectrum of a dataset."""

    def __init__(self, dataset: ExperimentDataset, config: ToolkitConfig = DEFAULT_CONFIG,
                 extra_gauss: float = 0.0):
        self.dataset = dataset
        self.config = config
        self.labels = dataset.alive_groups
        self.coupling = coupling_stack(self.labels, config.coupling)
        self.frames = np.stack([get_orientation(l).frame for l in self.labels])
        self.grids = [s.frequencies for s in dataset.spectra]
        self.extra_gauss = extra_gauss
        self.exact = bool(getattr(config.fit, "exact_lineshape", False))

    def profile(self, x, gamma, gw):
        return voigt(x, gamma, gw, exact=self.exact)

    def profile_derivative(self, x, gamma, gw):
        return voigt_derivative(x, gamma, gw, exact=self.exact)

    def lines(self, p: FitParameters, which=None) -> np.ndarray:
        idx = range(len(self.grids)) if which is None else which
        b = p.b_fields[list(idx)]
        f, _ = line_positions(p.sigma, b, self.labels, self.config.constants,
                              self.config.coupling, self.coupling, self.frames)
        return f.reshape(len(b), -1)

    def spectra(self, p: FitParameters, which=None) -> list[np.ndarray]:
        idx = list(range(len(self.grids))) if which is None else list(which)
        if not idx:
            return []
        centers = self.lines(p, idx)
        gamma = max(abs(p.lorentz_width), 1e-6)
        gw = math.hypot(_gauss_width(p, self.config), self.extra_gauss)
        depth = p.contrast / 2.0
        offsets, out = [], []
        for row, i in enumerate(idx):
            g = self.grids[i]
            offsets.append((g[None, :] - centers[row][:, None]).ravel())
        prof = self.profile(np.concatenate(offsets), gamma, gw)
        pos = 0
        for row, i in enumerate(idx):
            g = self.grids[i]
            n = centers.shape[1] * g.size
            block = prof[pos : pos + n].reshape(centers.shape[1], g.size)
            pos += n
            c = centers[row]
            if np.any((c >= g[0]) & (c <= g[-1])):
                out.append(p.baselines[i] - depth * block.sum(axis=0))
            else:
                out.append(np.full(g.size, p.baselines[i]))
        return out


def residuals(params: FitParameters, dataset: ExperimentDataset,
              config: ToolkitConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Concatenated (model - data) over all spectra."""
    model = ForwardModel(dataset, config).spectra(params)
    return np.concatenate([m - s.contrast for m, s in zip(model, dataset.spectra)])


class _Problem:
    """Residual vector and finite-difference Jacobian in scaled coordinates."""

    def __init__(self, dataset, config, layout, free_mask, x_full, extra_gauss=0.0, data=None):
        self.model = ForwardModel(dataset, config, extra_gauss)
        self.layout = layout
        self.free = np.flatnonzero(free_mask)
        self.x_full = np.array(x_full, dtype=float)
        self.scales = layout.scales[self.free]
        self.data = data if data is not None else [s.contrast for s in dataset.spectra]
        sizes = [d.size for d in self.data]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.opts = config.fit
        self.nfev = 0

    def native(self, z):
        x = self.x_full.copy()
        x[self.free] = z * self.scales
        return x

    def blocks(self, z, which=None):
        p = self.layout.unpack(self.native(z))
        self.nfev += 1
        idx = range(len(self.data)) if which is None else which
        return [m - self.data[i] for m, i in zip(self.model.spectra(p, list(idx)), idx)]

    def residual(self, z):
        return np.concatenate(self.blocks(z))

    def jacobian(self, z, method=None):
        method = method or getattr(self.opts, "jacobian", "chain")
        if method == "chain":
            return self._chain_jacobian(z)
        if method not in ("central", "forward"):
            raise ValueError(f"unknown jacobian method {method!r}")
        n_res = int(self.offsets[-1])
        jac = np.zeros((n_res, z.size))
        x_nat = z * self.scales
        for col, j in enumerate(self.free):
            h_nat = max(self.opts.fd_rel_step * abs(x_nat[col]), self.opts.fd_abs_step)
            h = h_nat / self.scales[col]
            aff = self.layout.affects[j]
            which = None if aff is None else sorted(aff)
            zp = z.copy()
            zp[col] += h
            up = self.blocks(zp, which)
            if method == "central":
                zm = z.copy()
                zm[col] -= h
                dn = self.blocks(zm, which)
                denom = 2 * h
            else:
                dn = self.blocks(z, which)
                denom = h
            rows = range(len(self.data)) if which is None else which
            for bu, bd, i in zip(up, dn, rows):
                jac[self.offsets[i] : self.offsets[i + 1], col] = (bu - bd) / denom
        return jac


    def _step(self, x_nat):
        return max(self.opts.fd_rel_step * abs(x_nat), self.opts.fd_abs_step)

    def _chain_jacobian(self, z):
        """Jacobian through the intermediate quantities of the model.

        Line centres, widths, baselines and contrast are differenced
        numerically (cheap: 3x3 eigenproblems and scalars); the spectrum's
        dependence on them is analytic in the centres and linear parameters,
        and one central difference each for the two widths.
        """
        model = self.model
        x = self.native(z)
        p = self.layout.unpack(x)
        cfg = model.config
        centers = model.lines(p)
        gamma = max(abs(p.lorentz_width), 1e-6)
        gw = math.hypot(_gauss_width(p, cfg), model.extra_gauss)
        depth = p.contrast / 2.0
        n_lines = centers.shape[1]
        offs = np.concatenate([(g[None, :] - c[:, None]).ravel() for g, c in zip(model.grids, centers)])
        prof = model.profile(offs, gamma, gw)
        dprof = model.profile_derivative(offs, gamma, gw)
        hg = 1e-6 * gamma + 1e-9
        d_gamma = (model.profile(offs, gamma + hg, gw) - model.profile(offs, max(gamma - hg, 0.0), gw)) / (
            gamma + hg - max(gamma - hg, 0.0))
        hw = 1e-6 * gw + 1e-9
        lo_w = gw - hw if gw > hw else gw
        d_gw = (model.profile(offs, gamma, gw + hw) - model.profile(offs, gamma, lo_w)) / (gw + hw - lo_w)
        blocks = []
        pos = 0
        for g, c in zip(model.grids, centers):
            n = n_lines * g.size
            sl = slice(pos, pos + n)
            pos += n
            live = bool(np.any((c >= g[0]) & (c <= g[-1])))
            shape = (n_lines, g.size)
            blocks.append((live, prof[sl].reshape(shape), dprof[sl].reshape(shape),
                           d_gamma[sl].reshape(shape).sum(axis=0), d_gw[sl].reshape(shape).sum(axis=0)))

        jac = np.zeros((int(self.offsets[-1]), z.size))
        names = self.layout.names
        # perturbed parameter sets, and one batched eigen solve for all the
        # line positions they move
        plan = []
        sig_rows, b_rows = [], []
        for col, j in enumerate(self.free):
            h = self._step(x[j])
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            pp, pm = self.layout.unpack(xp), self.layout.unpack(xm)
            aff = self.layout.affects[j]
            rows = list(range(len(self.data))) if aff is None else sorted(aff)
            start = None
            if names[j].startswith(("sigma.", "b[", "b.")):
                start = len(sig_rows)
                for q in (pp, pm):
                    for i in rows:
                        sig_rows.append(q.sigma)
                        b_rows.append(q.b_fields[i])
            plan.append((col, h, pp, pm, rows, start))
        if sig_rows:
            moved, _ = line_positions(np.array(sig_rows), np.array(b_rows), model.labels,
                                      cfg.constants, cfg.coupling, model.coupling, model.frames)
            moved = moved.reshape(len(sig_rows), -1)

        for col, h, pp, pm, rows, start in plan:
            if start is not None:
                k = len(rows)
                dc = (moved[start : start + k] - moved[start + k : start + 2 * k]) / (2 * h)
            d_gam = (max(abs(pp.lorentz_width), 1e-6) - max(abs(pm.lorentz_width), 1e-6)) / (2 * h)
            d_w = (math.hypot(_gauss_width(pp, cfg), model.extra_gauss)
                   - math.hypot(_gauss_width(pm, cfg), model.extra_gauss)) / (2 * h)
            d_con = (pp.contrast - pm.contrast) / (4 * h)
            for r, i in enumerate(rows):
                live, v, dv, dyg, dyw = blocks[i]
                colv = np.full(v.shape[1], (pp.baselines[i] - pm.baselines[i]) / (2 * h))
                if live:
                    if start is not None:
                        colv += depth * (dc[r] @ dv)
                    if d_gam:
                        colv -= depth * d_gam * dyg
                    if d_w:
                        colv -= depth * d_w * dyw
                    if d_con:
                        colv -= d_con * v.sum(axis=0)
                jac[self.offsets[i] : self.offsets[i + 1], col] = colv * self.scales[col]
        return jac


@dataclass
class FitResult:
    parameters: FitParameters
    names: list[str]
    free: list[str]
    residual_norm: float
    cost_history: list[float]
    std_errors: dict[str, float]
    converged: bool
    criterion: str
    iterations: int
    nfev: int
    hydrostatic_pressure: float
    calibration_pressure: float | None = None
    culet_gap: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "parameters": self.parameters.to_dict(),
            "hydrostatic_pressure_gpa": self.hydrostatic_pressure,
            "calibration_pressure_gpa": self.calibration_pressure,
            "calibration_minus_hydrostatic_gpa": (
                None if self.calibration_pressure is None
                else self.calibration_pressure - self.hydrostatic_pressure),
            "culet_gap_gpa": self.culet_gap,
            "residual_norm": self.residual_norm,
            "std_errors": self.std_errors,
            "converged": self.converged,
            "criterion": self.criterion,
            "iterations": self.iterations,
            "nfev": self.nfev,
            "cost_history": self.cost_history,
            "free_parameters": self.free,
            "diagnostics": self.diagnostics,
        }


def _levenberg_marquardt(prob: _Problem, z0: np.ndarray, opts: FitOptions):
    """Damped Gauss-Newton with Nielsen's damping update.

    Returns (z, r, jac, history, criterion, converged, iterations).
    """
    z = z0.copy()
    r = prob.residual(z)
    cost = 0.5 * float(r @ r)
    history = [cost]
    jac = prob.jacobian(z)
    a = jac.T @ jac
    g = jac.T @ r
    diag = np.maximum(np.diag(a), 1e-12 * max(1.0, float(np.max(np.diag(a)))))
    mu = opts.damping_init
    nu = 2.0
    criterion, converged, it = "max_iter", False, 0
    for it in range(1, opts.max_iter + 1):
        col_norm = np.sqrt(np.diag(a))
        rn = math.sqrt(2 * cost)
        with np.errstate(divide="ignore", invalid="ignore"):
            cosines = np.where(col_norm > 0, np.abs(g) / (col_norm * max(rn, 1e-300)), 0.0)
        if rn == 0.0 or float(np.max(cosines, initial=0.0)) <= opts.gtol:
            criterion, converged = "gradient", True
            break
        accepted = False
        while not accepted:
            try:
                h = np.linalg.solve(a + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                h = None
            if h is None or not np.all(np.isfinite(h)):
                mu *= nu
                nu *= 2
                if mu > opts.damping_ceiling:
                    return z, r, jac, history, "damping_ceiling", False, it
                continue
            if np.linalg.norm(h) <= opts.xtol * (np.linalg.norm(z) + opts.xtol):
                return z, r, jac, history, "step", True, it
            z_new = z + h
            r_new = prob.residual(z_new)
            cost_new = 0.5 * float(r_new @ r_new)
            pred = 0.5 * float(h @ (mu * diag * h - g))
            rho = (cost - cost_new) / pred if pred > 0 else -1.0
            if cost_new < cost and rho > 0:
                z, r, cost = z_new, r_new, cost_new
                history.append(cost)
                jac = prob.jacobian(z)
                a = jac.T @ jac
                g = jac.T @ r
                diag = np.maximum(diag, np.diag(a))
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                accepted = True
            else:
                mu *= nu
                nu *= 2
                if mu > opts.damping_ceiling:
                    return z, r, jac, history, "damping_ceiling", False, it
    return z, r, jac, history, criterion, converged, it


def _free_mask(layout: ParameterLayout, fixed: Sequence[str] | None) -> np.ndarray:
    mask = np.ones(len(layout), dtype=bool)
    for name in fixed or ():
        if name.endswith("*"):
            hits = [i for i, n in enumerate(layout.names) if n.startswith(name[:-1])]
        else:
            hits = [layout.index[name]] if name in layout.index else []
        if not hits:
            raise ValueError(f"unknown parameter {name!r}")
        mask[hits] = False
    return mask


def fit_global(
    dataset: ExperimentDataset,
    init: FitParameters,
    options: FitOptions | None = None,
    config: ToolkitConfig = DEFAULT_CONFIG,
    fixed: Sequence[str] | None = None,
    extra_gauss: float = 0.0,
    data: list[np.ndarray] | None = None,
) -> FitResult:
    """Levenberg-Marquardt fit of all free parameters starting at ``init``.

    ``fixed`` lists parameter names (a trailing ``*`` matches a prefix) that
    stay at their initial value. ``extra_gauss`` adds Gaussian broadening (MHz,
    in quadrature) to the model and ``data`` replaces the measured contrast;
    both exist for coarse-to-fine continuation.
    """
    opts = options or config.fit
    cfg = replace(config, fit=opts)
    if not all(np.all(np.isfinite(v)) for v in (init.sigma, init.b_fields, init.baselines)):
        raise ValueError("initial parameters must be finite")
    layout = ParameterLayout(dataset)
    x0 = layout.pack(init)
    mask = _free_mask(layout, fixed)
    field_free = any(m.known_field is None or np.any(m.known_field) for m in dataset.meta)
    shear_free = any(mask[layout.index[f"sigma.{n}"]] for n in STRESS_FIELDS[3:])
    if not field_free and shear_free:
        warnings.warn(
            "every spectrum is at zero field: the deviatoric stress is only constrained through "
            "per-orientation (D, E) pairs; add at least one spectrum with a nonzero field",
            IdentifiabilityWarning,
            stacklevel=2,
        )
    prob = _Problem(dataset, cfg, layout, mask, x0, extra_gauss, data)
    z0 = x0[mask] / layout.scales[mask]
    z, r, jac, history, criterion, converged, iters = _levenberg_marquardt(prob, z0, opts)
    x = prob.native(z)
    params = layout.unpack(x)
    params.lorentz_width = abs(params.lorentz_width)
    params.sigma_p = abs(params.sigma_p)
    names = layout.names
    free_names = [names[i] for i in prob.free]
    dof = max(r.size - z.size, 1)
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.pinv(jac.T @ jac) * s2
        se = np.sqrt(np.clip(np.diag(cov), 0, None)) * prob.scales
    except np.linalg.LinAlgError:
        se = np.full(z.size, np.nan)
    p_hyd = float(np.sum(params.sigma[:3]) / 3.0)
    cal_p = None
    lines = ForwardModel(dataset, cfg).lines(params)
    try:
        d_mean = float(np.mean(lines))
        cal_p = pressure_from_d(d_mean, cfg.calibration)[0]
    except ValueError:
        pass
    gap = None if dataset.culet_pressure is None else float(dataset.culet_pressure - p_hyd)
    return FitResult(
        parameters=params,
        names=names,
        free=free_names,
        residual_norm=float(np.linalg.norm(r)),
        cost_history=history,
        std_errors={n: float(v) for n, v in zip(free_names, se)},
        converged=converged,
        criterion=criterion,
        iterations=iters,
        nfev=prob.nfev,
        hydrostatic_pressure=p_hyd,
        calibration_pressure=cal_p,
        culet_gap=gap,
        diagnostics={"dof": dof, "noise_sigma_estimate": math.sqrt(s2)},
    )


def jacobian(params: FitParameters, dataset: ExperimentDataset,
             config: ToolkitConfig = DEFAULT_CONFIG, method: str = "chain") -> np.ndarray:
    """Jacobian of :func:`residuals` w.r.t. the packed parameters in native
    units (columns follow ``ParameterLayout.names``). ``method`` is
    ``"chain"`` (default), ``"central"`` or ``"forward"`` differences."""
    layout = ParameterLayout(dataset)
    x = layout.pack(params)
    mask = np.ones(len(layout), dtype=bool)
    prob = _Problem(dataset, config, layout, mask, x)
    return prob.jacobian(x / layout.scales, method) / layout.scales[mask]
