"""Acceptance criteria, one test each. Every test prints a single
``PASS``/``FAIL`` line; run ``python3 tests/test_acceptance.py`` to get the
nine lines without pytest."""
from __future__ import annotations

import json
import math
import sys
import tempfile
import time
import timeit
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from oracles import cubic_eigenvalues, random_hermitian, rabi_monte_carlo  # noqa: E402

from nvdac.calibration import d_from_pressure, pressure_from_d  # noqa: E402
from nvdac.cli import main as cli_main  # noqa: E402
from nvdac.config import DEFAULT_CONFIG  # noqa: E402
from nvdac.inversion import IdentifiabilityWarning, fit_dataset, match_modulo_symmetry  # noqa: E402
from nvdac.rabi import (  # noqa: E402
    RabiParameters,
    default_time_grid,
    detuning_sigma_for_decay_time,
    envelope_decay_time,
    rabi_power_law,
    rabi_signal,
)
from nvdac.spectrum import BroadeningModel, EnsembleScene, LineShapeParams, orientation_scan  # noqa: E402
from nvdac.spin import SpinTerms, build_hamiltonian, eig3_hermitian, transition_frequencies  # noqa: E402
from nvdac.stress import StressTensor  # noqa: E402
from nvdac.synthetic import REFERENCE_TENSOR, make_experiment  # noqa: E402

G = DEFAULT_CONFIG.constants.gamma_e


def _line(n: int, name: str, ok: bool, detail: str) -> str:
    return f"{'PASS' if ok else 'FAIL'} criterion {n} ({name}): {detail}"


def check_calibration():
    p0_d = d_from_pressure(0.0)
    p100 = pressure_from_d(4090.0)[0]
    reps = 2000
    per_call = timeit.timeit(lambda: (d_from_pressure(50.0), pressure_from_d(4090.0)), number=reps) / reps
    ok = p0_d == 2880.0 and abs(p100 - 100.0) <= 1e-6 and per_call < 1e-3
    return ok, f"D(0)={p0_d!r} MHz, P(4090 MHz)={p100:.9f} GPa, {per_call * 1e6:.1f} us per round trip"


def check_hydrostatic():
    p = StressTensor.from_vector(REFERENCE_TENSOR).hydrostatic_pressure
    ok = abs(p - 66.333) < 5e-4 and f"{p:.1f}" == "66.3"
    return ok, f"trace/3 = {p:.4f} GPa -> {p:.1f} GPa"


def check_slope_band():
    s = 3.0 * DEFAULT_CONFIG.coupling.a1
    return abs(s - 14.8) <= 1.0, f"3*a1 = {s:.2f} MHz/GPa vs 14.8 +- 1.0"


def check_zeeman():
    e = 10.0
    t0 = time.perf_counter()

    def split(bz):
        tr = transition_frequencies(build_hamiltonian(SpinTerms(DEFAULT_CONFIG.constants.d_ambient, e, 0.0),
                                                      (0.0, 0.0, bz)))
        return tr.f_plus - tr.f_minus

    def response(b, h=1e-4):
        return (split(b + h) - split(b - h)) / (2 * h) / (2 * G)

    low, high = response(1.0), response(100.0)
    dt = time.perf_counter() - t0
    ok = low < 0.05 and high > 0.95 and dt < 1.0
    return ok, (f"d(f+ - f-)/dB / 2gamma = {low:.4f} at 1 G (need < 0.05), {high:.4f} at 100 G "
                f"(need > 0.95), {dt * 1e3:.1f} ms")


def check_dip_counts():
    scene = EnsembleScene(StressTensor.hydrostatic(66.3), alive_groups=("[111]", "[-1-11]"),
                          line=LineShapeParams(0.07, 6.0), broadening=BroadeningModel(0.5))
    angles = np.linspace(100.0, 190.0, 100)
    grid = np.arange(3400.0, 4300.0, 1.0)
    scan = orientation_scan(scene, angles, 150.0, grid)
    counts = np.asarray(scan.dip_counts)
    bad = angles[~np.isin(counts, (2, 4))]
    values, n = np.unique(counts, return_counts=True)
    hist = ", ".join(f"{int(v)} dips: {int(c)}" for v, c in zip(values, n))
    detail = f"100 angles over 90 deg at 150 G: {hist}"
    if bad.size:
        detail += f"; outside {{2, 4}} at {bad.size} angles, e.g. {bad[0]:.1f} deg"
    return bad.size == 0, detail


def _one_round_trip(seed: int):
    ex = make_experiment(np.random.default_rng(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IdentifiabilityWarning)
        res = fit_dataset(ex.dataset, seed=seed)
    m = match_modulo_symmetry(res.parameters.sigma, res.parameters.b_fields, ex.truth.sigma, ex.truth.b_fields)
    return m.max_stress_error <= 1.0 and m.max_field_error <= 2.0, m.max_stress_error, m.max_field_error


def check_round_trip(n: int = 100):
    t0 = time.perf_counter()
    outcomes = [_one_round_trip(seed) for seed in range(n)]
    dt = time.perf_counter() - t0
    good = sum(o[0] for o in outcomes)
    failed = [k for k, o in enumerate(outcomes) if not o[0]]
    ok = good >= math.ceil(0.95 * n) and dt < 300.0
    return ok, f"{good}/{n} within 1 GPa and 2 G (failed seeds {failed}), {dt:.0f} s total"


def check_eigen_oracle(n: int = 100_000):
    hs = random_hermitian(np.random.default_rng(2024), n, scale=100.0)
    t0 = time.perf_counter()
    w, _ = eig3_hermitian(hs)
    dt = time.perf_counter() - t0
    err = 0.0
    for h, wi in zip(hs, w):
        ref = cubic_eigenvalues(h)
        err = max(err, float(np.max(np.abs(wi - ref)) / np.max(np.abs(ref))))
    ok = err < 1e-9 and dt < 10.0
    return ok, f"max relative error {err:.2e} over {n} matrices, solver {dt:.2f} s"


def check_rabi():
    pts = [(p, 5.0 * math.sqrt(p)) for p in (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)]
    expo = rabi_power_law(pts).exponent
    omega = 40.0
    sig = detuning_sigma_for_decay_time(omega, 50.0)
    grid = default_time_grid(omega, 300.0)
    q = rabi_signal(RabiParameters(omega, sig, grid))
    t1e = envelope_decay_time(q)
    mc = rabi_monte_carlo(grid, omega, sig, n_samples=10**6)
    diff = float(np.max(np.abs(q.signal - mc)))
    ok = abs(expo - 0.5) <= 1e-9 and abs(t1e - 50.0) <= 2.0 and diff <= 1e-3
    return ok, (f"exponent {expo!r}; omega {omega} MHz, sigma {sig:.3f} MHz -> t_1e {t1e:.3f} ns; "
                f"quadrature vs 1e6-sample Monte Carlo max diff {diff:.1e}")


def _report_bytes(path: Path) -> bytes:
    return b"".join(ln for ln in path.read_bytes().splitlines(keepends=True) if b'"generated_at"' not in ln)


def check_determinism():
    runs = [
        ["simulate-spectrum", "--noise", "0.002", "--grid", "3400", "4300", "0.5"],
        ["simulate-rabi", "--detuning-sigma", "30"],
        ["calibrate", "--d-mhz", "3700"],
    ]
    same = []
    with tempfile.TemporaryDirectory() as tmp:
        for k, argv in enumerate(runs):
            blobs = []
            for rep in range(2):
                out = Path(tmp) / f"{k}_{rep}"
                code = cli_main(argv + ["--seed", "11", "--out-dir", str(out)])
                files = sorted(p for p in out.iterdir())
                blobs.append((code, [(p.name, _report_bytes(p) if p.name == "report.json" else p.read_bytes())
                                     for p in files]))
                json.loads((out / "report.json").read_text())
            same.append(blobs[0] == blobs[1] and blobs[0][0] == 0)
    return all(same), f"{sum(same)}/{len(runs)} commands byte-identical across repeated seeded runs"


CRITERIA = [
    (1, "calibration", check_calibration),
    (2, "hydrostatic", check_hydrostatic),
    (3, "slope band", check_slope_band),
    (4, "Zeeman regime", check_zeeman),
    (5, "dip-count geometry", check_dip_counts),
    (6, "inverse round trip", check_round_trip),
    (7, "eigen oracle", check_eigen_oracle),
    (8, "Rabi physics", check_rabi),
    (9, "determinism", check_determinism),
]


@pytest.mark.parametrize("n,name,check", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(n, name, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(n, name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for n, name, check in CRITERIA:
        ok, detail = check()
        print(_line(n, name, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
