import io
import json
import subprocess
import sys

import numpy as np
import pytest

from ragicl.cli import main, parse_values
from ragicl.config import ConfigError, DistanceProportional, ExperimentConfig, Uniform
from ragicl.sweep import ROW_FIELDS, ResultRow, SweepSpec, point_config, read_csv_rows, render_csv, run_sweep


def run(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


def write(tmp_path, text, name="cfg.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_values():
    assert parse_values("0:4") == [0, 1, 2, 3, 4]
    assert parse_values("0.5:1.5:0.5") == [0.5, 1.0, 1.5]
    assert parse_values("1,2, 8") == [1, 2, 8]
    assert parse_values("") == []
    with pytest.raises(ConfigError):
        parse_values("a,b")


def test_spec_validation():
    base = ExperimentConfig(8, 0, 2)
    with pytest.raises(ConfigError):
        SweepSpec(base, "n", ())
    with pytest.raises(ConfigError):
        SweepSpec(base, "n", (3, 2))
    with pytest.raises(ConfigError):
        SweepSpec(base, "width", (1,))
    with pytest.raises(ConfigError):
        SweepSpec(base, "n", (0.5,))


def test_point_configs():
    base = ExperimentConfig(12, 4, 2, regime=DistanceProportional(1.0, 0.5, 0.2))
    assert point_config(base, "q", 0.75).regime.q == 0.75
    r = point_config(base, "ratio", 0.25)
    assert (r.m, r.n) == (12, 4)
    with pytest.raises(ConfigError):
        point_config(base, "delta2", 0.1)
    with pytest.raises(ConfigError):
        point_config(base, "ratio", 1.0)
    assert point_config(ExperimentConfig(8, 0, 2), "delta2", 0.3).regime.delta2 == 0.3


def test_verify_default_grid_passes():
    code, out = run(["verify"])
    assert code == 0
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_verify_rejects_bad_mixture(tmp_path):
    cfg = write(tmp_path, "regime = mixture\nc_s = 2\nc_l = 1\n")
    code, _ = run(["verify", "--config", cfg])
    assert code == 1


def test_verify_tampered_tolerance(tmp_path):
    cfg = write(tmp_path, "mc_sigmas = 1e-15\n")
    code, out = run(["verify", "--config", cfg])
    assert code == 2
    assert "FAIL" in out


def test_verify_single_config(tmp_path):
    cfg = write(tmp_path, "m = 6\nn = 3\nd = 2\nregime = dpn\ngamma1 = 1\ngamma2 = 0.3\nq = 0.5\n")
    code, out = run(["verify", "--config", cfg, "--trials", "20000"])
    assert code == 0 and "dpn" in out


def test_moments_check():
    code, out = run(["moments-check", "--seed", "3"])
    assert code == 0 and "pairing-count" in out


def test_missing_config_is_io_error(tmp_path):
    code, _ = run(["verify", "--config", str(tmp_path / "nope.txt")])
    assert code == 3


def test_unwritable_output(tmp_path):
    code, _ = run(["sweep", "--values", "0:2", "--out", str(tmp_path / "missing" / "x.csv")])
    assert code == 3


def test_bad_usage_is_validation_error():
    assert run(["sweep", "--axis", "width"])[0] == 1
    assert run(["sweep", "--values", ""])[0] == 1
    assert run(["sweep", "--values", "4,2"])[0] == 1
    assert run([])[0] == 1


def test_sweep_n_has_interior_minimum(tmp_path):
    cfg = write(tmp_path, "m = 16\nd = 4\nsigma2 = 1.0\nsigma2_rag = 0.01\n")
    out_path = tmp_path / "n.csv"
    code, _ = run(["sweep", "--config", cfg, "--axis", "n", "--values", "0:64", "--out", str(out_path)])
    assert code == 0
    text = out_path.read_text()
    rows = read_csv_rows(text)
    assert len(rows) == 65
    assert list(rows[0]) == list(ROW_FIELDS)
    total = np.array([float(r["total"]) for r in rows])
    k = int(np.argmin(total))
    assert 0 < k < 64
    assert abs(k - int(rows[0]["n_star"])) <= 1
    assert "# m = 16" in text and "# axis = n" in text


def test_sweep_dpn_variance_increases(tmp_path):
    cfg = write(tmp_path, "m = 8\nd = 2\nregime = dpn\ngamma1 = 1\ngamma2 = 1\nq = 0.75\n")
    code, out = run(["sweep", "--config", cfg, "--axis", "n", "--values", "200,400,800,1600,3200"])
    assert code == 0
    var = [float(r["variance_err"]) for r in read_csv_rows(out)]
    assert all(b > a for a, b in zip(var, var[1:]))
    assert read_csv_rows(out)[0]["n_star"] == ""


def test_flags_override_file(tmp_path):
    cfg = write(tmp_path, "m = 8\nd = 2\nseed = 5\naxis = m\nvalues = 4,8\n")
    _, out = run(["sweep", "--config", cfg, "--seed", "9"])
    rows = read_csv_rows(out)
    assert [r["m"] for r in rows] == ["4", "8"] and rows[0]["seed"] == "9"
    _, out = run(["sweep", "--config", cfg, "--axis", "n", "--values", "1"])
    assert read_csv_rows(out)[0]["n"] == "1"


def test_sweep_both_modes_side_by_side():
    code, out = run(["sweep", "--values", "0,4", "--mode", "both", "--trials", "20000", "--format", "json"])
    assert code == 0
    payload = json.loads(out)
    assert payload["metadata"]["config"]["m"] == "8"
    assert payload["metadata"]["versions"]["numpy"] == np.__version__
    row = payload["rows"][1]
    assert set(row) == set(ROW_FIELDS)
    assert abs(row["mc_total"] - row["total"]) <= 4 * row["mc_total_stderr"]


def test_analytic_rows_leave_mc_columns_empty():
    _, out = run(["sweep", "--values", "2"])
    row = read_csv_rows(out)[0]
    assert row["mc_total"] == "" and row["mc_total_stderr"] == "" and row["total"] != ""


def test_sweep_byte_identical_across_runs_and_workers(tmp_path):
    outs = []
    for workers in ("1", "4"):
        p = tmp_path / f"w{workers}.csv"
        run(["sweep", "--values", "0:5", "--mode", "mc", "--trials", "5000", "--seed", "4",
             "--workers", workers, "--out", str(p)])
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_ratio_axis():
    _, out = run(["sweep", "--axis", "ratio", "--values", "0,0.25,0.5", "--config", "/dev/null"])
    rows = read_csv_rows(out)
    assert [(r["m"], r["n"]) for r in rows] == [("8", "0"), ("6", "2"), ("4", "4")]


def test_optimal_n_reports(tmp_path):
    cfg = write(tmp_path, "m = 32\nd = 4\nsigma2 = 0.04\nsigma2_rag = 0.01\n")
    code, out = run(["optimal-n", "--config", cfg])
    assert code == 0
    assert out == run(["optimal-n", "--config", cfg])[1]
    n_star = int(out.split("n* = ")[1].split()[0])
    improvement = float(out.split("improvement = ")[1].split()[0])
    assert n_star >= 1 and improvement > 0 and "agrees" in out


def test_optimal_n_noisy_retrieval(tmp_path):
    cfg = write(tmp_path, "m = 16\nd = 2\nsigma2 = 0.1\nsigma2_rag = 4.0\n")
    code, out = run(["optimal-n", "--config", cfg])
    assert code == 0
    assert "n* = 0\n" in out and "improvement = 0.0" in out


def test_row_schema_is_stable():
    spec = SweepSpec(ExperimentConfig(8, 0, 2), "n", (0,))
    header = [ln for ln in render_csv(spec, run_sweep(spec)).splitlines() if not ln.startswith("#")][0]
    assert header.split(",") == [f for f in ResultRow.__dataclass_fields__]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ragicl", "sweep", "--values", "0,1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.count("\n") > 3
