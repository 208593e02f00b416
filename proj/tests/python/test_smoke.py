import math
import os
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

import emla_lab

ROOT = Path(__file__).resolve().parents[2]
CONFIGS = Path(os.environ.get("EMLA_CONFIG_DIR", ROOT / "configs"))
DATA = Path(os.environ.get("EMLA_TEST_DATA_DIR", ROOT / "tests" / "data"))


def test_park_round_trip():
    d, q, z = emla_lab.park_abc_to_dq(1.0, -0.3, -0.7, 0.4)
    a, b, c = emla_lab.park_dq_to_abc(d, q, z, 0.4)
    assert (a, b, c) == pytest.approx((1.0, -0.3, -0.7), abs=1e-12)


def test_lyapunov_residual():
    a = np.array([[-1.0, 1.0], [-3.0, -2.0]])
    q = np.eye(2)
    p = emla_lab.solve_lyapunov(a, q)
    assert np.abs(p @ a + a.T @ p + q).max() < 1e-12
    assert emla_lab.is_hurwitz(a)
    assert not emla_lab.is_hurwitz(np.zeros((2, 2)))


def test_simulate_lift():
    res = emla_lab.simulate(str(CONFIGS / "lift.json"), seed=42)
    trace = res["trace"]
    assert trace.shape[1] == len(res["columns"])
    assert not res["diverged"]
    assert res["metrics"]["converged"]
    assert res["metrics"]["pos_error"] <= 1e-4
    assert res["min_eta_hat"] > 0.0
    again = emla_lab.simulate(str(CONFIGS / "lift.json"), seed=42)
    assert again["trace_csv"] == res["trace_csv"]


def test_report_is_valid_svg(tmp_path):
    svg = emla_lab.render_report(str(DATA / "golden_trace.csv"))
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "Position tracking" in svg


def test_verify_round_trip(tmp_path):
    res = emla_lab.simulate(str(CONFIGS / "telescope.json"))
    trace = tmp_path / "trace.csv"
    trace.write_text(res["trace_csv"])
    summary = emla_lab.verify(trace, CONFIGS / "telescope.json")
    assert summary["checks"]["eta_hat_positive"]
    assert summary["passed"]


def test_optimize():
    res = emla_lab.optimize(str(CONFIGS / "trajectory_hdrm.json"))
    assert res["max_violation"] <= 1e-6
    assert res["final_cost"] <= res["seed_cost"]
    assert math.isfinite(res["t_final"])


def test_validation_error_names_field():
    with pytest.raises(emla_lab.ValidationError) as info:
        emla_lab.validate(str(CONFIGS / "broken" / "negative_gain.json"))
    assert info.value.field == "gains.zeta[1]"
    assert isinstance(info.value, ValueError)
    assert emla_lab.validate(str(CONFIGS / "lift.json")) == "scenario"
