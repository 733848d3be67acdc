"""Command-line entry point.

Usage:
    nvdac simulate-spectrum --sigma 62.8 60.6 75.6 -5.7 3.8 7.5 --b 0 0 100
    nvdac calibrate --d-mhz 4090
    nvdac fit [--manifest experiment.json]
    nvdac orientation-scan --groups '[111]' '[-1-11]' --pressure 66.3
    nvdac simulate-rabi --omega 40 --decay-time-ns 50
    nvdac version

Every command except ``version`` writes ``report.json`` plus CSV plot data
into ``--out-dir``. Reports are deterministic for a fixed ``--seed`` apart
from the ``generated_at`` field.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationRangeWarning, extract_d_and_e, pressure_from_d
from .config import ToolkitConfig, load_config
from .inversion import fit_dataset
from .io import load_manifest, load_spectrum_csv, write_rabi_csv, write_spectrum_csv
from .rabi import (
    RabiParameters,
    default_time_grid,
    detuning_sigma_for_decay_time,
    envelope_decay_time,
    estimate_rabi_frequency,
    rabi_signal,
)
from .report import build_report, write_report
from .spectrum import (
    BroadeningModel,
    EnsembleScene,
    LineShapeParams,
    SpectrumTrace,
    add_noise,
    orientation_scan,
    resonance_lines,
    synthesize_spectrum,
)
from .stress import ORIENTATION_LABELS, StressTensor
from .synthetic import REFERENCE_TENSOR

log = logging.getLogger("nvdac")

EXIT_OK = 0
EXIT_FIT_FAILED = 2
EXIT_INPUT_ERROR = 3


def _parse_set(items: list[str]) -> dict:
    """``section.key=value`` overrides; values are parsed as JSON when possible."""
    out: dict = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        section, dot, name = key.partition(".")
        if dot:
            out.setdefault(section, {})[name] = value
        else:
            out[section] = value
    return out


def _config(args) -> ToolkitConfig:
    cfg = load_config(args.config)
    if args.set:
        cfg = cfg.with_overrides(**_parse_set(args.set))
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(args) -> np.ndarray:
    start, stop, step = args.grid
    return np.arange(start, stop + step / 2, step)


def _scene(args, cfg: ToolkitConfig, sigma, b=(0.0, 0.0, 0.0)) -> EnsembleScene:
    line = LineShapeParams(
        args.contrast if args.contrast is not None else cfg.line.contrast_per_group,
        args.lorentz_width if args.lorentz_width is not None else cfg.line.lorentz_width,
        cfg.line.baseline,
    )
    sp = args.sigma_p if args.sigma_p is not None else cfg.sigma_p
    return EnsembleScene(StressTensor.from_vector(sigma), tuple(b), tuple(args.groups), line,
                         BroadeningModel(sp))


def cmd_simulate_spectrum(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    scene = _scene(args, cfg, args.sigma, args.b)
    trace = synthesize_spectrum(scene, _grid(args), cfg.constants, cfg.coupling, cfg.calibration)
    if args.noise > 0:
        trace = add_noise(trace, args.noise, np.random.default_rng(args.seed))
    write_spectrum_csv(out / "spectrum.csv", trace)
    lines = resonance_lines(scene, cfg.constants, cfg.coupling)
    result = {
        "lines_mhz": [{"orientation": ln.orientation, "f_minus": ln.f_minus, "f_plus": ln.f_plus,
                       "ambiguous": ln.ambiguous} for ln in lines],
        "flags": list(trace.flags),
        "hydrostatic_pressure_gpa": scene.sigma.hydrostatic_pressure,
        "files": ["spectrum.csv"],
    }
    inputs = {"sigma_gpa": list(args.sigma), "b_gauss": list(args.b), "groups": list(args.groups),
              "grid_mhz": list(args.grid), "noise": args.noise}
    write_report(out / "report.json", build_report("simulate-spectrum", result, cfg, args.seed, inputs))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    cal = cfg.calibration
    result: dict = {}
    if args.spectrum:
        fit = extract_d_and_e(load_spectrum_csv(args.spectrum))
        d = fit.d
        result["dip_fit"] = {"d_mhz": fit.d, "e_mhz": fit.e, "centers_mhz": list(fit.centers),
                             "fwhm_mhz": fit.fwhm, "n_dips": fit.n_dips, "converged": fit.converged,
                             "reduced_chi2": fit.reduced_chi2}
    else:
        d = args.d_mhz
    result["d_mhz"] = d
    status = "ok"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CalibrationRangeWarning)
        try:
            p, dp = pressure_from_d(d, cal)
            result["pressure_gpa"] = p
            result["pressure_uncertainty_gpa"] = dp
        except ValueError as exc:
            result["error"] = str(exc)
            status = "error"
    result["warnings"] = [str(w.message) for w in caught]
    micro = (d - cfg.constants.d_ambient) / (3.0 * cfg.coupling.a1)
    result["microscopic_pressure_gpa"] = micro
    if "pressure_gpa" in result:
        result["calibration_minus_microscopic_gpa"] = result["pressure_gpa"] - micro
    write_report(out / "report.json", build_report("calibrate", result, cfg, args.seed,
                                                   {"d_mhz": args.d_mhz, "spectrum": args.spectrum},
                                                   status))
    if status != "ok":
        print(f"error: {result['error']}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    print(f"P = {result['pressure_gpa']:.6f} +- {result['pressure_uncertainty_gpa']:.3f} GPa")
    return EXIT_OK


def bundled_manifest() -> Path:
    return Path(str(resources.files("nvdac") / "data" / "demo" / "manifest.json"))


def cmd_fit(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    manifest_path = Path(args.manifest) if args.manifest else bundled_manifest()
    manifest = load_manifest(manifest_path)
    dataset = manifest.to_dataset()
    res = fit_dataset(dataset, cfg, max_stress_candidates=args.max_candidates, seed=args.seed)
    ok = bool(res.converged and res.diagnostics.get("reached_noise_floor", False))
    from .inversion import ForwardModel

    files = []
    for k, (m, tr) in enumerate(zip(ForwardModel(dataset, cfg).spectra(res.parameters), dataset.spectra)):
        name = f"model_{k}.csv"
        write_spectrum_csv(out / name, SpectrumTrace(tr.frequencies, m))
        files.append(name)
    result = res.to_dict()
    result["files"] = files
    result["success"] = ok
    inputs = {"manifest": manifest.to_dict(), "bundled": args.manifest is None}
    write_report(out / "report.json", build_report("fit", result, cfg, args.seed, inputs,
                                                   "ok" if ok else "fit_failed"))
    s = res.parameters.sigma
    print("sigma (GPa): " + " ".join(f"{v:.3f}" for v in s))
    print(f"hydrostatic pressure: {res.hydrostatic_pressure:.3f} GPa")
    if not ok:
        print(f"fit failed: criterion={res.criterion}, noise floor reached="
              f"{res.diagnostics.get('reached_noise_floor')}", file=sys.stderr)
        return EXIT_FIT_FAILED
    return EXIT_OK


def cmd_orientation_scan(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    sigma = args.sigma if args.sigma is not None else StressTensor.hydrostatic(args.pressure).as_vector()
    scene = _scene(args, cfg, sigma)
    angles = np.linspace(args.start_deg, args.stop_deg, args.n_angles)
    scan = orientation_scan(scene, angles, args.field_gauss, _grid(args), prominence=args.prominence,
                            constants=cfg.constants, coupling=cfg.coupling, calibration=cfg.calibration)
    with open(out / "dip_counts.csv", "w") as fh:
        fh.write("angle_deg,dip_count\n")
        for a, c in zip(scan.angles_deg, scan.dip_counts):
            fh.write(f"{a!r},{int(c)}\n")
    values, counts = np.unique(scan.dip_counts, return_counts=True)
    result = {
        "dip_counts": scan.dip_counts.tolist(),
        "histogram": {str(int(v)): int(c) for v, c in zip(values, counts)},
        "fields_gauss": scan.fields.tolist(),
        "files": ["dip_counts.csv"],
    }
    inputs = {"groups": list(args.groups), "sigma_gpa": list(map(float, sigma)),
              "field_gauss": args.field_gauss, "angles_deg": [args.start_deg, args.stop_deg, args.n_angles],
              "prominence": args.prominence}
    write_report(out / "report.json", build_report("orientation-scan", result, cfg, args.seed, inputs))
    print("dip counts: " + ", ".join(f"{k}: {v}" for k, v in result["histogram"].items()))
    return EXIT_OK


def cmd_simulate_rabi(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.detuning_sigma is not None:
        sig = args.detuning_sigma
    else:
        sig = detuning_sigma_for_decay_time(args.omega, args.decay_time_ns)
    t_max = args.t_max if args.t_max is not None else 6.0 * (args.decay_time_ns or 50.0)
    grid = default_time_grid(args.omega, t_max, args.points_per_period)
    trace = rabi_signal(RabiParameters(args.omega, sig, grid))
    write_rabi_csv(out / "rabi.csv", trace)
    try:
        t1e = envelope_decay_time(trace)
    except ValueError:
        t1e = None
    result = {
        "detuning_sigma_mhz": sig,
        "envelope_decay_time_ns": t1e,
        "rabi_frequency_estimate_mhz": estimate_rabi_frequency(trace),
        "files": ["rabi.csv"],
    }
    inputs = {"omega_mhz": args.omega, "detuning_sigma": args.detuning_sigma,
              "decay_time_ns": args.decay_time_ns, "t_max_ns": t_max}
    write_report(out / "report.json", build_report("simulate-rabi", result, cfg, args.seed, inputs))
    print(f"detuning sigma {sig:.6g} MHz, 1/e time {t1e} ns")
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"nvdac {__version__}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults built in)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value, e.g. calibration.d0=2870")
    p.add_argument("--out-dir", default=".", help="directory for report.json and CSV output")
    p.add_argument("--seed", type=int, default=0, help="seed for every random step")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_scene(p: argparse.ArgumentParser, groups=ORIENTATION_LABELS) -> None:
    p.add_argument("--groups", nargs="+", default=list(groups),
                   help="alive NV orientations, bracketed (e.g. '[111]' '[-1-11]')")
    p.add_argument("--grid", nargs=3, type=float, default=[2600.0, 4800.0, 1.0],
                   metavar=("START", "STOP", "STEP"), help="frequency grid in MHz")
    p.add_argument("--contrast", type=float, help="summed depth of one orientation's two lines")
    p.add_argument("--lorentz-width", type=float, help="Lorentzian HWHM in MHz")
    p.add_argument("--sigma-p", type=float, help="pressure spread in GPa")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvdac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-spectrum", help="synthesize an ODMR spectrum")
    _add_common(p)
    _add_scene(p)
    p.add_argument("--sigma", nargs=6, type=float, default=REFERENCE_TENSOR.tolist(),
                   metavar=("SXX", "SYY", "SZZ", "SXY", "SXZ", "SYZ"), help="stress in GPa")
    p.add_argument("--b", nargs=3, type=float, default=[0.0, 0.0, 0.0], metavar=("BX", "BY", "BZ"),
                   help="crystal-frame field in Gauss")
    p.add_argument("--noise", type=float, default=0.0, help="white-noise standard deviation")
    p.set_defaults(func=cmd_simulate_spectrum)

    p = sub.add_parser("calibrate", help="pressure from the zero-field splitting")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--d-mhz", type=float, help="zero-field splitting D in MHz")
    src.add_argument("--spectrum", help="spectrum CSV to extract D from")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit", help="global stress and field fit of a spectrum series")
    _add_common(p)
    p.add_argument("--manifest", help="experiment manifest JSON (default: bundled synthetic dataset)")
    p.add_argument("--max-candidates", type=int, default=4, help="stress candidates to try")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("orientation-scan", help="dip counts while rotating the field")
    _add_common(p)
    _add_scene(p, groups=ORIENTATION_LABELS[:2])
    p.add_argument("--pressure", type=float, default=66.3, help="hydrostatic pressure (GPa)")
    p.add_argument("--sigma", nargs=6, type=float, help="full stress tensor instead of --pressure")
    p.add_argument("--field-gauss", type=float, default=150.0)
    p.add_argument("--start-deg", type=float, default=100.0)
    p.add_argument("--stop-deg", type=float, default=190.0)
    p.add_argument("--n-angles", type=int, default=100)
    p.add_argument("--prominence", type=float, default=0.003, help="dip prominence floor (contrast units)")
    p.set_defaults(func=cmd_orientation_scan)

    p = sub.add_parser("simulate-rabi", help="Rabi oscillation with detuning spread")
    _add_common(p)
    p.add_argument("--omega", type=float, default=40.0, help="Rabi frequency in MHz")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--detuning-sigma", type=float, help="Gaussian detuning spread in MHz")
    g.add_argument("--decay-time-ns", type=float, default=50.0,
                   help="solve for the spread giving this envelope 1/e time")
    p.add_argument("--t-max", type=float, help="longest pulse in ns")
    p.add_argument("--points-per-period", type=int, default=40)
    p.set_defaults(func=cmd_simulate_rabi)

    p = sub.add_parser("version", help="print the toolkit version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
