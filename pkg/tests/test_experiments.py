import csv

import numpy as np
import pytest

from picof.experiments import (
    ScenarioMismatchError,
    _solver,
    compare_dirs,
    compare_results,
    run_fuelcell,
    toy_problem,
)
from picof.outer import candidate_points
from picof.plants import DH_RXN
from picof.scenarios import ScenarioError, load_scenario


def test_toy_trace_shape(runs):
    res = runs.result("toy", 0, True)
    assert len(res.trace) == 25
    steps = [r.step for r in res.trace.records]
    assert steps == list(range(1, 26))
    assert all(r.c_star is not None for r in res.trace.records)


def test_toy_baseline_rows_have_no_inner_diagnostics(runs):
    res = runs.result("toy", 0, False)
    rec = res.trace.records[0]
    assert rec.c_star is None and rec.inner_iterations is None
    assert np.array_equal(rec.p_tilde, rec.mu)


def test_toy_grids(runs, tmp_path):
    res = runs.result("toy", 0, True)
    assert set(res.grids) == {"grid_trial_first", "grid_trial_last"}
    res.write(tmp_path)
    with open(tmp_path / "grid_trial_first.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "p2_true", "mu_p2", "sigma_p2", "ptilde_p2"]
    assert len(rows) == 102 and all(len(r) == 5 for r in rows)
    xs = np.array([float(r[0]) for r in rows[1:]])
    assert np.allclose(np.diff(xs), 0.02)


def test_matched_first_step_candidates():
    scn = load_scenario("toy")
    pb = toy_problem(scn)
    # both variants build their solver from the same scenario and seed
    a = candidate_points(pb, _solver(scn, 0), 1)
    b = candidate_points(pb, _solver(scn, 0), 1)
    assert np.array_equal(a, b)


def test_violations_counted_from_plant_truth(runs):
    res = runs.result("toy", 0, False)
    for rec in res.trace.records:
        assert rec.violation == (rec.y_obs[1] > 140.0)


def test_fc_schedule_has_forty_steps():
    assert load_scenario("fuelcell").steps == 40
    assert load_scenario("fuelcell", trials=3).steps == 3


def test_fc_run_invariants(runs):
    res = runs.result("fuelcell", 0, True)
    tr = res.trace
    assert len(tr) == 40
    assert [r.time for r in tr.records] == [250.0 * k for k in range(1, 41)]
    cum = tr.column("cumulative_h2")
    assert np.all(np.diff(cum) >= 0)
    for key in ("total_power", "total_thermal", "total_h2_rate"):
        assert key in tr.extras_keys
    for rec in tr.records:
        n = 5
        bal = rec.y_obs[:n] * DH_RXN - rec.y_obs[n:] - rec.x_obs
        assert np.max(np.abs(bal)) <= 1e-9


def test_fc_pretraining_uses_achieved_powers(runs):
    res = runs.result("fuelcell", 0, True)
    X = np.array(res.trace.meta["pretrain_inputs"])
    assert X.shape == (8, 5)
    # achieved powers settle within the sampling range
    assert np.all(X >= 10.0 - 1e-6) and np.all(X <= 60.0 + 1e-6)


def test_short_fc_run_is_byte_deterministic():
    a = run_fuelcell(3, True, trials=2).trace.to_csv_text()
    b = run_fuelcell(3, True, trials=2).trace.to_csv_text()
    assert a == b


def test_compare_report(runs):
    rep = compare_results(runs.result("toy", 0, True), runs.result("toy", 0, False))
    assert rep.scenario == "toy" and rep.seed == 0
    assert rep.runs["picof"]["violations"] == runs.result("toy", 0, True).trace.violations
    assert rep.checks["violations_not_worse"] is True


def test_compare_rejects_mismatched_seeds(runs, tmp_path):
    runs.result("toy", 0, True).write(tmp_path / "a")
    runs.result("toy", 1, False).write(tmp_path / "b")
    with pytest.raises(ScenarioMismatchError):
        compare_dirs(tmp_path / "a", tmp_path / "b")


def test_compare_rejects_same_mode(runs, tmp_path):
    runs.result("toy", 0, True).write(tmp_path / "a")
    runs.result("toy", 0, True).write(tmp_path / "b")
    with pytest.raises(ScenarioMismatchError):
        compare_dirs(tmp_path / "a", tmp_path / "b")


def test_scenario_overrides_are_validated():
    with pytest.raises(ScenarioError):
        load_scenario("toy", trials=0)
    with pytest.raises(ScenarioError):
        load_scenario("toy", beta=-1.0)
    with pytest.raises(ScenarioError):
        load_scenario("toy", weights=[1.0, 2.0, 3.0])
    assert load_scenario("toy", z=3.0)["z"] == 3.0


def test_scenario_hash_is_stable():
    assert load_scenario("toy").sha256 == load_scenario("toy", z=1.0).sha256
    assert load_scenario("toy").sha256 != load_scenario("fuelcell").sha256
