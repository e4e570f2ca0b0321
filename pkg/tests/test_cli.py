"""Command-line interface: config parsing, subcommands, exit codes,
and byte-level determinism of the emitted files.

Exit-code contract
------------------
0 = every selected test passed (inconclusive counts as pass unless
--strict), 1 = hard failure (statistical or runtime), 2 = config error.
"""

import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from inertdrift import (
    Interval,
    make_domain,
    read_path_csv,
    solve_skorokhod,
    write_path_csv,
)
from inertdrift._kernels import HAVE_NUMBA
from inertdrift.cli import ConfigError, emit_histograms, load_run_config, main
from inertdrift.simulate import SimConfig, TrajectoryBatch

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not active")


def base_config(**overrides):
    cfg = {
        "dimension": 1,
        "domain": {"kind": "interval", "bounds": [0.0, 1.0]},
        "coefficients": {"preset": "identity", "gamma": [[1.0]]},
        "sim": {
            "family": "reflected",
            "dt_base": 0.001,
            "t_end": 2.0,
            "n_paths": 8,
            "seed": 3,
            "burn_in": 0.5,
            "snap_every": 50,
        },
        "tests": [],
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def test_load_run_config_accepts_dict_and_file(tmp_path):
    cfg = base_config()
    from_dict = load_run_config(cfg)
    from_file = load_run_config(write_config(tmp_path, "a.json", cfg))
    assert from_dict.dimension == from_file.dimension == 1
    assert from_dict.sim == from_file.sim
    assert from_dict.domain.d == 1


def test_asymmetric_gamma_names_the_field():
    cfg = base_config(dimension=2,
                      domain={"kind": "ball", "center": [0.0, 0.0],
                              "radius": 1.0},
                      coefficients={"preset": "identity",
                                    "gamma": [[1.0, 0.3], [0.2, 1.0]]})
    with pytest.raises(ConfigError, match="coefficients.gamma"):
        load_run_config(cfg)


def test_unknown_sim_field_rejected():
    cfg = base_config()
    cfg["sim"]["n_pathz"] = 4
    with pytest.raises(ConfigError, match="sim.n_pathz"):
        load_run_config(cfg)


def test_domain_dimension_cross_checked():
    cfg = base_config(domain={"kind": "ball", "center": [0.0, 0.0],
                              "radius": 1.0})
    with pytest.raises(ConfigError, match="dimension"):
        load_run_config(cfg)


def test_angular_test_needs_two_dimensions():
    cfg = base_config(tests=["angular"])
    with pytest.raises(ConfigError, match="angular"):
        load_run_config(cfg)


def test_potential_requires_gradient_family():
    cfg = base_config(potential={"kind": "regularized_vn", "n": 2})
    with pytest.raises(ConfigError, match="gradient"):
        load_run_config(cfg)


def test_unknown_test_name_rejected():
    cfg = base_config(tests=["ks", "kurtosis"])
    with pytest.raises(ConfigError, match="kurtosis"):
        load_run_config(cfg)


def test_config_error_exits_2(tmp_path, capsys):
    cfg = base_config()
    cfg["coefficients"]["gamma"] = [[-1.0]]
    path = write_config(tmp_path, "bad.json", cfg)
    assert main(["run", path]) == 2
    assert "config error" in capsys.readouterr().err


def test_malformed_json_exits_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run subcommand
# ---------------------------------------------------------------------------


def test_dry_run_writes_manifest_only(tmp_path, capsys):
    path = write_config(tmp_path, "cfg.json", base_config())
    out = tmp_path / "out"
    assert main(["run", path, "--dry-run", "--output-dir", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["manifest.json"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["dry_run"] is True
    assert manifest["n_steps"] == 2000
    assert manifest["config"]["sim"]["seed"] == 3


def test_run_outputs_are_byte_identical(tmp_path):
    path = write_config(tmp_path, "cfg.json", base_config())
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["run", path, "--output-dir", str(out1)]) == 0
    assert main(["run", path, "--output-dir", str(out2)]) == 0
    names = sorted(os.listdir(out1))
    assert names == sorted(os.listdir(out2))
    assert {"manifest.json", "trajectory.csv", "hist_x1.csv",
            "hist_x1.svg", "hist_k1.csv", "hist_k1.svg"} <= set(names)
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


@needs_numba
def test_run_backends_agree_bitwise(tmp_path):
    path = write_config(tmp_path, "cfg.json", base_config())
    out1, out2 = tmp_path / "nb", tmp_path / "np"
    assert main(["run", path, "--output-dir", str(out1),
                 "--backend", "numba", "--no-histograms"]) == 0
    assert main(["run", path, "--output-dir", str(out2),
                 "--backend", "numpy", "--no-histograms"]) == 0
    assert (out1 / "trajectory.csv").read_bytes() == \
        (out2 / "trajectory.csv").read_bytes()


def test_shipped_interval_config_passes(tmp_path, capsys):
    path = os.path.join(CONFIG_DIR, "interval_gamma1.json")
    out = tmp_path / "out"
    assert main(["run", path, "--output-dir", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    passes = [ln for ln in lines if "[PASS]" in ln]
    assert len(passes) == 3
    report = (out / "report.csv").read_text().splitlines()
    assert report[0].startswith("name,statistic,threshold")
    assert len(report) == 4
    ET.parse(out / "hist_x1.svg")  # well-formed XML


def test_inconclusive_passes_unless_strict(tmp_path, capsys):
    cfg = base_config(tests=["moments"])
    cfg["sim"].update(t_end=3.0, n_paths=4, seed=1, burn_in=1.0,
                      snap_every=100)
    path = write_config(tmp_path, "cfg.json", cfg)
    assert main(["run", path, "--output-dir", str(tmp_path / "a"),
                 "--no-histograms"]) == 0
    assert "[INCONCLUSIVE]" in capsys.readouterr().out
    assert main(["run", path, "--output-dir", str(tmp_path / "b"),
                 "--no-histograms", "--strict"]) == 1


def test_coarse_step_fails_the_ks_battery(tmp_path, capsys):
    cfg = base_config(tests=["ks"])
    cfg["sim"].update(t_end=30.0, n_paths=256, seed=9, burn_in=5.0,
                      snap_every=20)
    path = write_config(tmp_path, "cfg.json", cfg)
    assert main(["run", path, "--output-dir", str(tmp_path / "out"),
                 "--no-histograms"]) == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_output_root_env_var(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("INERTDRIFT_OUTPUT_ROOT", str(tmp_path / "root"))
    path = write_config(tmp_path, "cfg.json", base_config())
    assert main(["run", path, "--no-histograms"]) == 0
    out = tmp_path / "root" / "run-cfg"
    assert (out / "trajectory.csv").exists()


# ---------------------------------------------------------------------------
# skorokhod subcommand
# ---------------------------------------------------------------------------


def test_skorokhod_subcommand_matches_direct_solve(tmp_path):
    rng = np.random.default_rng(5)
    times = np.linspace(0.0, 1.0, 801)
    values = np.cumsum(rng.normal(0.0, 0.02, (801, 1)), axis=0) + 0.2
    drive = tmp_path / "drive.csv"
    write_path_csv(str(drive), times, values)
    cfg = write_config(tmp_path, "cfg.json", base_config())
    out = tmp_path / "solved.csv"
    assert main(["skorokhod", str(drive), cfg, "--out", str(out)]) == 0
    direct = solve_skorokhod(make_domain("interval", bounds=(0.0, 1.0)),
                             read_path_csv(str(drive)))
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.array_equal(rows[:, 1], direct.values[:, 0])
    assert np.array_equal(rows[:, 2], direct.local_time)


def test_skorokhod_oversized_step_exits_1(tmp_path, capsys):
    times = np.array([0.0, 1.0])
    values = np.array([[0.5], [-0.5]])  # jump of 1.0 > width/8 guard
    drive = tmp_path / "drive.csv"
    write_path_csv(str(drive), times, values)
    cfg = write_config(tmp_path, "cfg.json", base_config())
    assert main(["skorokhod", str(drive), cfg]) == 1
    assert "refine the time grid" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# residual subcommand
# ---------------------------------------------------------------------------


def test_residual_subcommand_reflected_interval(tmp_path, capsys):
    cfg = write_config(tmp_path, "cfg.json", base_config())
    out = tmp_path / "out"
    assert main(["residual", cfg, "--output-dir", str(out),
                 "--count", "3"]) == 0
    lines = (out / "residuals.csv").read_text().splitlines()
    assert lines[0] == "config_id,f_id,residual,tolerance,pass"
    assert len(lines) == 4
    for line in lines[1:]:
        fields = line.split(",")
        assert abs(float(fields[2])) <= 1e-5
        assert fields[4] == "1"


def test_residual_subcommand_tolerance_override(tmp_path, capsys):
    cfg = write_config(tmp_path, "cfg.json", base_config())
    out = tmp_path / "out"
    assert main(["residual", cfg, "--output-dir", str(out),
                 "--count", "2", "--tolerance", "1e-30"]) == 1
    assert "[FAIL]" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# sweep subcommand
# ---------------------------------------------------------------------------


def test_sweep_subcommand_reports_and_masses(tmp_path, capsys):
    cfg = base_config()
    cfg["sim"].update(t_end=4.0, n_paths=48, seed=7, burn_in=1.0,
                      snap_every=20)
    path = write_config(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert main(["sweep", path, "--output-dir", str(out),
                 "--n-list", "1,2,8"]) == 0
    report = (out / "report.csv").read_text().splitlines()
    assert report[1].startswith("weak_convergence_sweep")
    rows = np.loadtxt(out / "masses.csv", delimiter=",", skiprows=1)
    assert list(rows[:, 0]) == [1.0, 2.0, 8.0]
    assert np.all(np.diff(rows[:, 1]) > 0)  # smoothed mass grows with n
    assert "noise floor" in capsys.readouterr().out


def test_sweep_rejects_bad_n_list(tmp_path, capsys):
    path = write_config(tmp_path, "cfg.json", base_config())
    assert main(["sweep", path, "--output-dir", str(tmp_path / "o"),
                 "--n-list", "4,2"]) == 1
    assert "increasing" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# histogram subcommand
# ---------------------------------------------------------------------------


@pytest.fixture()
def run_outputs(tmp_path):
    path = write_config(tmp_path, "cfg.json", base_config())
    out = tmp_path / "run"
    assert main(["run", path, "--output-dir", str(out),
                 "--no-histograms"]) == 0
    return path, out


def test_histogram_subcommand(tmp_path, run_outputs, capsys):
    cfg_path, run_dir = run_outputs
    out = tmp_path / "hist"
    assert main(["histogram", str(run_dir / "trajectory.csv"),
                 "--config", cfg_path, "--bins", "12",
                 "--output-dir", str(out)]) == 0
    counts = np.loadtxt(out / "hist_x1.csv", delimiter=",", skiprows=1)
    assert counts.shape == (12, 3)
    ET.parse(out / "hist_x1.svg")


def test_histogram_rejects_single_bin(tmp_path, run_outputs, capsys):
    _, run_dir = run_outputs
    assert main(["histogram", str(run_dir / "trajectory.csv"),
                 "--bins", "1", "--output-dir", str(tmp_path / "h")]) == 2
    assert "bins" in capsys.readouterr().err


def test_histogram_rejects_malformed_trajectory(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("path_id,t,x1,k1,ell\n")
    assert main(["histogram", str(bad),
                 "--output-dir", str(tmp_path / "h")]) == 1


def test_emit_histograms_rejects_unusable_batch(tmp_path):
    sim = SimConfig(family="reflected", dt_base=0.001, t_end=1.0,
                    n_paths=1, seed=0)
    batch = TrajectoryBatch(
        times=np.array([1.0]),
        x=np.zeros((1, 1, 1)),
        k=np.zeros((1, 1, 1)),
        ell=np.zeros((1, 1)),
        flags=np.array([1], dtype=np.int64),  # flagged path: nothing usable
        log_weights=None,
        diagnostics={},
        config=sim,
        backend="numpy",
        run_info={},
    )
    with pytest.raises(ValueError, match="usable"):
        emit_histograms(batch, 10, str(tmp_path))
