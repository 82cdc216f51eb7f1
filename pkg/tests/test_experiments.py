import json
import os

import numpy as np
import pytest

from fdcirc.config import SolverParams
from fdcirc.experiments import (EXPERIMENTS, SweepSpec, build_equality_fixture,
                                export, los_vector, run_sweep,
                                structural_scattering_probe, weight_grid)

from conftest import make_cfg

LEAN = SolverParams(bcd_max_iters=4, bcd_rel_tol=1e-3, pdd_outer_max=40,
                    pdd_inner_max=8, pdd_eps=1e-4)


def test_weight_grid_properties():
    grid = weight_grid()
    assert len(grid) == 66
    for w in grid:
        assert sum(w) == pytest.approx(1.0, abs=1e-12)
        assert all(x >= 0 for x in w)
    assert len(set(grid)) == 66
    with pytest.raises(ValueError):
        weight_grid(k=4)


def test_structural_scattering_probe_supplementary_angles():
    """|sum_n e^{j n pi (cos a + cos b)}| = M exactly when a + b = 180 deg."""
    for m in (8, 16, 48):
        for a in (30.0, 60.0, 105.0):
            assert structural_scattering_probe((a, 180.0 - a), m) == \
                pytest.approx(float(m), abs=1e-9)
    # generic angles match the closed-form geometric sum
    for m in (8, 16):
        a, b = 40.0, 75.0
        x = np.pi * (np.cos(np.deg2rad(a)) + np.cos(np.deg2rad(b)))
        want = abs(np.sin(m * x / 2) / np.sin(x / 2))
        assert structural_scattering_probe((a, b), m) == pytest.approx(want,
                                                                       abs=1e-12)


def test_equality_fixture_attains_bound(rng):
    """|h_k^T (Phi - I) h_{k-1}| hits (||h_k|| ||h_{k-1}|| + |h_k^T h_{k-1}|)."""
    for _ in range(20):
        m = 8
        h_km1 = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        h_k = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        fx = build_equality_fixture(h_km1, h_k)
        phi = fx.phi_constructed
        np.testing.assert_allclose(phi.conj().T @ phi, np.eye(m), atol=1e-10)
        got = abs(h_k @ (phi - np.eye(m)) @ h_km1)
        bound = (np.linalg.norm(h_k) * np.linalg.norm(h_km1)
                 + abs(h_k @ h_km1))
        assert got == pytest.approx(bound, rel=1e-10)
    assert abs(fx.beta) == pytest.approx(1.0, rel=1e-12)


def test_equality_bound_never_violated(rng):
    from fdcirc.scattering import random_unitary
    m = 8
    h_km1 = los_vector(60.0, m)
    h_k = los_vector(105.0, m)
    bound = (np.linalg.norm(h_k) * np.linalg.norm(h_km1) + abs(h_k @ h_km1))
    for _ in range(500):
        phi = random_unitary(rng, m)
        val = abs(h_k @ (phi - np.eye(m)) @ h_km1)
        assert val <= bound * (1 + 1e-10)


def test_los_vector_norm():
    v = los_vector(90.0, 16)
    from fdcirc.channel import path_loss_linear
    want = np.sqrt(path_loss_linear(35.0, 2.2, -30.0) * 16)
    assert np.linalg.norm(v) == pytest.approx(want, rel=1e-12)


def test_run_sweep_shapes_and_aggregates():
    cfg = make_cfg(elements=4, solver=LEAN, seed=3)
    spec = SweepSpec(experiment="elements", swept_values=[4, 8],
                     trials=2, arms=["NR", "D"])
    rows = run_sweep(spec, cfg)
    # per arm and value: 2 trial rows + mean + stderr
    assert len(rows) == 2 * 2 * (2 + 2)
    trials = [r for r in rows if r["trial"] == 0]
    assert all(r["experiment"] == "elements" for r in rows)
    means = [r for r in rows if r["trial"] == "mean"]
    assert len(means) == 4
    for mrow in means:
        arm, value = mrow["arm"], mrow["value"]
        vals = [r["weighted_sum_rate"] for r in rows
                if r["arm"] == arm and r["value"] == value
                and isinstance(r["trial"], int)]
        assert mrow["weighted_sum_rate"] == pytest.approx(np.mean(vals), rel=1e-12)


def test_run_sweep_convergence_traces():
    cfg = make_cfg(elements=4, solver=LEAN, seed=3)
    spec = SweepSpec(experiment="convergence", swept_values=[0],
                     trials=1, arms=["NR"])
    rows = run_sweep(spec, cfg)
    trace = [r for r in rows if r.get("record") == "trace"]
    assert trace
    objs = [r["objective"] for r in trace]
    for a, b in zip(objs, objs[1:]):
        assert b >= a - 1e-8 * (1 + abs(a))


def test_run_sweep_beampatterns():
    cfg = make_cfg(elements=8, solver=LEAN, seed=3)
    spec = SweepSpec(experiment="beampatterns", swept_values=[0],
                     trials=1, arms=["NR"])
    rows = run_sweep(spec, cfg)
    assert rows
    assert {"impinging", "reflected", "angle_deg", "user"} <= set(rows[0])
    peak = max(max(r["impinging"] for r in rows),
               max(r["reflected"] for r in rows))
    assert peak == pytest.approx(1.0, abs=1e-9)


def test_run_sweep_rejects_unknown():
    cfg = make_cfg()
    with pytest.raises(ValueError):
        run_sweep(SweepSpec(experiment="nope", swept_values=[1]), cfg)
    with pytest.raises(ValueError):
        run_sweep(SweepSpec(experiment="elements", swept_values=[]), cfg)
    assert "rate_region" in EXPERIMENTS


def test_export_csv_deterministic(tmp_path):
    rows = [{"a": 1, "b": 2.5}, {"a": 3, "b": 4.5, "c": "x"}]
    cfg = make_cfg()
    p1 = export(rows, "csv", str(tmp_path / "one"), "t", cfg)
    p2 = export(rows, "csv", str(tmp_path / "two"), "t", cfg)
    with open(p1["data"], "rb") as fh:
        d1 = fh.read()
    with open(p2["data"], "rb") as fh:
        d2 = fh.read()
    assert d1 == d2
    with open(p1["manifest"]) as fh:
        m1 = json.load(fh)
    with open(p2["manifest"]) as fh:
        m2 = json.load(fh)
    assert m1 == m2
    assert m1["rows"] == 2
    assert m1["seed"] == cfg.seed
    assert "users = 3" in m1["config"]
    # header carries the union of keys in first-seen order
    assert d1.splitlines()[0] == b"a,b,c"


def test_export_json_and_bad_format(tmp_path):
    rows = [{"a": np.int64(1), "flag": np.bool_(True), "x": np.float64(2.0)}]
    paths = export(rows, "json", str(tmp_path), "j", None)
    with open(paths["data"]) as fh:
        data = json.load(fh)
    assert data["rows"][0] == {"a": 1, "flag": True, "x": 2.0}
    with pytest.raises(ValueError):
        export(rows, "xml", str(tmp_path), "j", None)
