import json
import math
import os

import numpy as np
import pytest

from pamcat.errors import ValidationError
from pamcat.harness import (
    SchemaError,
    asymptotic_scan,
    estimate_lyapunov,
    estimate_lyapunov_pair,
    format_csv,
    load_config,
    replay,
    rescaled_lyapunov,
    run,
    theorem_rhs,
)
from pamcat.lattice_kernels import green_value
from pamcat.stats import fit_log_slope, weighted_slope


def test_weighted_slope_exact_line():
    t = np.linspace(0, 3, 7)
    s, b, coeffs = weighted_slope(t, 2.5 * t - 1.0, np.linspace(1, 2, 7))
    assert s == pytest.approx(2.5, abs=1e-13) and b == pytest.approx(-1.0, abs=1e-13)
    assert coeffs @ np.ones(7) == pytest.approx(0.0, abs=1e-13)


def test_fit_recovers_exponential():
    rng = np.random.default_rng(1)
    t = np.linspace(1, 3, 5)
    factor = rng.uniform(0.5, 1.5, size=(100, 1))
    bm = factor * np.exp(0.7 * t)[None, :]
    fit = fit_log_slope(t, bm, np.zeros(5))
    assert fit.slope == pytest.approx(0.7, abs=1e-12)
    fit = fit_log_slope(t, bm * np.exp(-0.2 * t), 0.2 * t, scale=0.5)
    assert fit.slope == pytest.approx(0.35, abs=1e-12)


@pytest.mark.parametrize("rho,expected", [(0.0, 0.0), (1.0, 1.0)])
def test_lyapunov_degenerate(rho, expected):
    for p in (1, 2):
        est = estimate_lyapunov(1.0, rho, p, (0.5, 1.5), 200, side=8)
        assert est.slope == pytest.approx(expected, abs=1e-12)
        assert est.stderr == pytest.approx(0.0, abs=1e-12) and est.usable


def test_lyapunov_between_rho_and_one():
    est = estimate_lyapunov(1.0, 0.4, 1, (0.5, 1.5), 4000, side=8, seed=2)
    assert 0.4 - 4 * est.stderr <= est.slope <= 1.0
    assert est.window == (0.5, 1.5) and est.samples == 4000


def test_lyapunov_drift_window():
    est = estimate_lyapunov(1.0, 0.4, 1, (1.0, 2.0), 2000, side=8, drift_window=(0.5, 1.0))
    assert est.drift_window == (0.5, 1.0) and math.isfinite(est.drift_slope)


def test_pair_gap_nonnegative():
    row = estimate_lyapunov_pair(0.5, 0.5, (0.5, 2.0), 4000, side=8, seed=1)
    assert row.gap > -4 * row.gap_se
    assert row.gap == pytest.approx(row.lambda2 - row.lambda1, abs=1e-14)


def test_rescaled_identity():
    k2, se, kg, kse = rescaled_lyapunov(2.0, 0.5, (0.5, 1.5), 2000, side=8, seed=3)
    # kappa^2 lambda* and kappa (lambda_1 - rho) are the same number on shared samples
    assert k2 == pytest.approx(kg, rel=1e-10)
    assert se == pytest.approx(kse, rel=1e-10)


def test_theorem_rhs():
    G = green_value((0, 0, 0))
    assert theorem_rhs(0.0, 1) == 0.0 and theorem_rhs(1.0, 3) == 0.0
    assert theorem_rhs(0.3, 2, p3=0.0) == pytest.approx(0.21 * G / 6)
    assert theorem_rhs(0.3, 2, p3=1e-3) == pytest.approx(theorem_rhs(0.7, 2, p3=1e-3))
    assert theorem_rhs(0.5, 1) == pytest.approx(0.25 * G / 6 + 2.25 * 6.8717e-4, rel=1e-5)
    with pytest.raises(ValidationError):
        theorem_rhs(1.5, 1)
    with pytest.raises(ValidationError):
        theorem_rhs(0.5, 0)


def test_scan_validation():
    with pytest.raises(ValidationError):
        asymptotic_scan(0.5, 1, [2.0, 1.0], 100)
    with pytest.raises(ValidationError):
        asymptotic_scan(0.5, 1, [], 100)


def test_format_csv_digits():
    text = format_csv(["a", "b", "c"], [{"a": 1 / 3, "b": True, "c": 7}])
    head, row = text.strip().splitlines()
    assert head == "a,b,c"
    assert row == f"{1 / 3:.17g},1,7"
    assert float(row.split(",")[0]) == 1 / 3


CONFIG = """
[run]
seed = 11
stages = kernels.a moment.b

[kernels.a]
times = 0.5 2
points = 0 0 0; 1 0 0

[moment.b]
kappa = 1
rho = 0.5
t = 0.5
side = 6
samples = 500
"""


def test_config_missing_key_named():
    bad = CONFIG.replace("kappa = 1\n", "")
    with pytest.raises(SchemaError) as exc:
        load_config(bad)
    assert exc.value.keys == ("kappa",) and "kappa" in str(exc.value)


def test_config_unknown_key_and_kind():
    with pytest.raises(SchemaError) as exc:
        load_config(CONFIG.replace("samples = 500", "samples = 500\nbogus = 1"))
    assert "bogus" in exc.value.keys
    with pytest.raises(SchemaError):
        load_config(CONFIG.replace("moment.b", "nosuch.b"))
    with pytest.raises(SchemaError):
        load_config(CONFIG.replace("kappa = 1", "kappa = fast"))


def test_empty_stage_list(tmp_path):
    m = run("[run]\nseed = 1\nstages =\n", str(tmp_path))
    assert m.completed == [] and m.outputs == {}
    assert sorted(os.listdir(tmp_path)) == ["manifest.json"]


def test_run_is_reproducible(tmp_path):
    a = run(CONFIG, str(tmp_path / "a"))
    b = run(CONFIG, str(tmp_path / "b"), threads=2)
    assert a.completed == ["kernels.a", "moment.b"]
    assert a.outputs == b.outputs and len(a.outputs) == 3
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["failed"] is None
    _, mismatches = replay(str(tmp_path / "a" / "manifest.json"), str(tmp_path / "c"))
    assert mismatches == []


def test_different_seed_changes_output(tmp_path):
    a = run(CONFIG, str(tmp_path / "a"))
    b = run(CONFIG.replace("seed = 11", "seed = 12"), str(tmp_path / "b"))
    assert a.outputs["kernels.a_kernels.csv"] == b.outputs["kernels.a_kernels.csv"]
    assert a.outputs["moment.b_moment.csv"] != b.outputs["moment.b_moment.csv"]


def test_failed_stage_recorded(tmp_path):
    bad = CONFIG.replace("rho = 0.5", "rho = 1.5")
    with pytest.raises(ValidationError):
        run(bad, str(tmp_path))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["completed"] == ["kernels.a"]
    assert manifest["failed"]["stage"] == "moment.b"
