import json

import numpy as np
import pytest
from scipy.signal import find_peaks

from nvdac import __version__
from nvdac.cli import bundled_manifest, main
from nvdac.inversion import match_modulo_symmetry
from nvdac.io import load_rabi_csv, load_spectrum_csv
from nvdac.report import strip_volatile
from nvdac.stress import STRESS_FIELDS


def _report(d):
    return json.loads((d / "report.json").read_text())


def test_version(capsys):
    assert main(["version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_flag_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "--bogus", "1"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_calibrate_4090(tmp_path):
    assert main(["calibrate", "--d-mhz", "4090", "--out-dir", str(tmp_path)]) == 0
    r = _report(tmp_path)
    assert r["result"]["pressure_gpa"] == pytest.approx(100.0, abs=1e-9)
    assert r["config"]["calibration"]["d0"] == 2880.0
    assert r["toolkit_version"] == __version__


def test_calibrate_out_of_range_reports_error(tmp_path):
    assert main(["calibrate", "--d-mhz", "6000", "--out-dir", str(tmp_path)]) != 0
    assert _report(tmp_path)["status"] == "error"


def test_calibrate_set_override(tmp_path):
    assert main(["calibrate", "--d-mhz", "2870", "--set", "calibration.d0=2870",
                 "--out-dir", str(tmp_path)]) == 0
    assert _report(tmp_path)["result"]["pressure_gpa"] == 0.0


def test_simulate_spectrum_dips_match_lines(tmp_path):
    assert main(["simulate-spectrum", "--out-dir", str(tmp_path), "--lorentz-width", "1",
                 "--sigma-p", "0.01", "--grid", "3500", "4300", "0.05"]) == 0
    r = _report(tmp_path)
    lines = sorted(v for ln in r["result"]["lines_mhz"] for v in (ln["f_minus"], ln["f_plus"]))
    tr = load_spectrum_csv(tmp_path / "spectrum.csv")
    idx, _ = find_peaks(-tr.contrast, prominence=1e-3)
    dips = tr.frequencies[idx]
    assert dips.size == len(lines)
    assert np.max(np.abs(dips - np.array(lines))) <= 0.05


def test_simulate_spectrum_calibrates_back(tmp_path):
    # hydrostatic tensor at zero field: the CSV feeds straight into calibrate
    sim, cal = tmp_path / "sim", tmp_path / "cal"
    assert main(["simulate-spectrum", "--sigma", "50", "50", "50", "0", "0", "0",
                 "--out-dir", str(sim)]) == 0
    assert main(["calibrate", "--spectrum", str(sim / "spectrum.csv"), "--out-dir", str(cal)]) == 0
    res = _report(cal)["result"]
    # the microscopic model sets the line; the empirical calibration reads it higher
    assert res["microscopic_pressure_gpa"] == pytest.approx(50.0, abs=0.05)
    assert res["pressure_gpa"] > 50.0


def test_simulate_rabi(tmp_path):
    assert main(["simulate-rabi", "--omega", "40", "--detuning-sigma", "20", "--out-dir", str(tmp_path)]) == 0
    r = _report(tmp_path)
    assert r["result"]["rabi_frequency_estimate_mhz"] == pytest.approx(40.0, rel=0.05)
    tr = load_rabi_csv(tmp_path / "rabi.csv")
    assert tr.signal[0] == 1.0


def test_orientation_scan(tmp_path):
    assert main(["orientation-scan", "--n-angles", "10", "--grid", "3600", "4100", "1",
                 "--out-dir", str(tmp_path)]) == 0
    r = _report(tmp_path)
    assert len(r["result"]["dip_counts"]) == 10
    assert (tmp_path / "dip_counts.csv").read_text().startswith("angle_deg,dip_count\n")


def test_fit_bundled(tmp_path):
    assert main(["fit", "--out-dir", str(tmp_path)]) == 0
    r = _report(tmp_path)
    assert r["status"] == "ok" and r["result"]["success"]
    truth = json.loads((bundled_manifest().parent / "truth.json").read_text())
    p = r["result"]["parameters"]
    sigma = [p["sigma_gpa"][k] for k in STRESS_FIELDS]
    m = match_modulo_symmetry(sigma, p["b_fields_gauss"], truth["sigma_gpa"], truth["b_fields_gauss"])
    assert m.max_stress_error <= truth["tolerance"]["stress_gpa"]
    assert m.max_field_error <= truth["tolerance"]["field_gauss"]
    assert (tmp_path / "model_0.csv").is_file()


def test_failed_fit_still_writes_report(tmp_path):
    f = np.arange(2800.0, 2950.0)
    (tmp_path / "flat.csv").write_text(
        "frequency_mhz,contrast\n" + "".join(f"{v!r},1.0\n" for v in f))
    (tmp_path / "m.json").write_text(json.dumps({"spectra": [{"path": "flat.csv", "known_field": [0, 0, 0]}]}))
    out = tmp_path / "out"
    code = main(["fit", "--manifest", str(tmp_path / "m.json"), "--out-dir", str(out)])
    assert code != 0


@pytest.mark.parametrize("argv", [
    ["simulate-spectrum", "--noise", "0.001", "--grid", "3500", "4300", "1"],
    ["simulate-rabi", "--detuning-sigma", "30"],
    ["calibrate", "--d-mhz", "3500"],
])
def test_deterministic_reports(tmp_path, argv):
    texts = []
    for k in range(2):
        d = tmp_path / str(k)
        assert main(argv + ["--seed", "7", "--out-dir", str(d)]) == 0
        texts.append(json.dumps(strip_volatile(_report(d)), sort_keys=True))
        texts.append((d / ("spectrum.csv" if argv[0] == "simulate-spectrum" else "rabi.csv")).read_bytes()
                     if argv[0] != "calibrate" else b"")
    assert texts[0] == texts[2] and texts[1] == texts[3]
