import json
import math

import numpy as np
import pytest

from heatsleuth.experiment import (
    ConfigError,
    ExperimentConfig,
    run_experiment,
    validate_config,
)

PI = math.pi

TINY = """
# minimal fast configuration
kind = circle
xi_true = 0.7, 1.5707963267948966, 0.2
truth_forward = spectral
forward = spectral
n_eigen = 20
n_total = 60
n_t = 10
max_windows = 2
sigma = 0.05
"""


def tiny_cfg(tmp_path, **kw):
    kw.setdefault("out", str(tmp_path / "run"))
    return validate_config(TINY, kw)


def test_validate_config_parses_values(tmp_path):
    cfg = tiny_cfg(tmp_path)
    assert cfg.kind == "circle"
    assert cfg.xi_true == (0.7, PI / 2, 0.2)
    assert cfg.n_total == 60
    assert cfg.truth_forward == "spectral"


def test_validate_config_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        validate_config("kind = circle\nnot a config line\n")
    with pytest.raises(ConfigError, match="line 1.*unknown key"):
        validate_config("bogus = 3\n")
    with pytest.raises(ConfigError, match="could not parse"):
        validate_config("n_total = many\n")
    with pytest.raises(ConfigError, match="boolean"):
        validate_config("tune = maybe\n")


def test_validate_config_override_keys():
    with pytest.raises(ConfigError, match="unknown override"):
        validate_config(TINY, {"nope": "1"})
    cfg = validate_config(TINY, {"seed": "7"})
    assert cfg.seed == 7


def test_consistency_checks():
    with pytest.raises(ConfigError, match="sigma"):
        validate_config(TINY + "sigma = 0\n")
    with pytest.raises(ConfigError, match="mode"):
        validate_config(TINY + "mode = wandering\n")
    with pytest.raises(ConfigError, match="kind"):
        validate_config("kind = triangle\n")
    with pytest.raises(ConfigError, match="forward"):
        validate_config(TINY + "forward = magic\n")


def test_inverse_crime_guard():
    base = "kind = circle\nxi_true = 0.7, 1.57, 0.2\n"
    bad = base + "truth_forward = fem\nforward = fem\nfine_n_r = 5\nfine_n_theta = 5\ncoarse_n_r = 5\ncoarse_n_theta = 5\n"
    with pytest.raises(ConfigError, match="inverse crime"):
        validate_config(bad)
    cfg = validate_config(bad, {"allow_inverse_crime": "true"})
    assert cfg.allow_inverse_crime
    # strictly finer truth grid is fine without the escape hatch
    ok = bad.replace("fine_n_r = 5", "fine_n_r = 6")
    validate_config(ok)


def test_invalid_truth_star_rejected():
    text = "kind = fourier_star\nxi_true = 0.1, 0, 0, 0, 0.9\n"
    with pytest.raises(ConfigError, match="valid star"):
        validate_config(text)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_experiment_artifacts(tmp_path):
    cfg = tiny_cfg(tmp_path)
    art = run_experiment(cfg)
    assert art.movement_csv.exists()
    assert art.data_csv.exists()
    assert art.reconstruction_csv.exists()
    assert art.summary_json.exists()
    assert len(art.chain_csvs) == art.summary["n_windows"]

    summary = json.loads(art.summary_json.read_text())
    assert summary["config"]["kind"] == "circle"
    assert len(summary["sensor_path"]) == summary["n_windows"]
    assert summary["n_measurements"] == len(
        art.data_csv.read_text().strip().splitlines()) - 1
    for w in summary["windows"]:
        assert len(w["posterior_mean_xi"]) == 3
        assert 0.0 <= w["acceptance_rate"] <= 1.0

    # movement.csv has one row per window plus the header
    lines = art.movement_csv.read_text().strip().splitlines()
    assert lines[0].startswith("k,t_start")
    assert len(lines) == summary["n_windows"] + 1

    # chain csv carries both unconstrained and physical columns
    head = art.chain_csvs[0].read_text().splitlines()[0]
    assert head == "iter,accepted,phi,z1,z2,z3,xi1,xi2,xi3"


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_run_experiment_deterministic(tmp_path):
    a = run_experiment(tiny_cfg(tmp_path, out=str(tmp_path / "a")))
    b = run_experiment(tiny_cfg(tmp_path, out=str(tmp_path / "b")))
    assert a.data_csv.read_bytes() == b.data_csv.read_bytes()
    assert a.movement_csv.read_bytes() == b.movement_csv.read_bytes()
    for ca, cb in zip(a.chain_csvs, b.chain_csvs):
        assert ca.read_bytes() == cb.read_bytes()


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_sampler_seed_does_not_touch_data(tmp_path):
    a = run_experiment(tiny_cfg(tmp_path, out=str(tmp_path / "a")))
    b = run_experiment(tiny_cfg(tmp_path, out=str(tmp_path / "b"),
                                sampler_seed=99))
    # measurement noise comes from its own stream: identical data ...
    assert a.data_csv.read_bytes() == b.data_csv.read_bytes()
    # ... while the chains differ
    assert a.chain_csvs[0].read_bytes() != b.chain_csvs[0].read_bytes()


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_fixed_mode_runs(tmp_path):
    cfg = tiny_cfg(tmp_path, mode="fixed")
    art = run_experiment(cfg)
    summary = art.summary
    # the fixed sensor never moves
    assert len(set(summary["sensor_path"])) == 1
    assert summary["n_windows"] == cfg.max_windows
