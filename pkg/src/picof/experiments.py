"""Reproducible runs of the toy and fuel-cell case studies."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gp import Dataset, HyperBounds, SurrogateBundle, build_bundle, bundle_predict
from .outer import HyperSchedule, InnerStats, OuterProblem, RtoLoop, SolverConfig
from .physics import fc_energy_balance, toy_balance
from .plants import FcStackParams, FuelCellPlant, ToyPlant, toy_p2
from .reconcile import CorrectionMode, WeightPolicy, reconcile_point
from .scenarios import Scenario, load_scenario
from .trace import RunTrace, read_trace_table, write_grid

GRID_HEADER = ["x", "p2_true", "mu_p2", "sigma_p2", "ptilde_p2"]

__all__ = [
    "RunResult",
    "ComparisonReport",
    "toy_problem",
    "toy_bundle",
    "toy_grid",
    "run_toy",
    "fc_problem",
    "fc_pretrain",
    "run_fuelcell",
    "compare",
    "compare_dirs",
]


@dataclass
class RunResult:
    trace: RunTrace
    stats: InnerStats
    grids: dict = field(default_factory=dict)
    bundle: SurrogateBundle | None = None

    def write(self, directory):
        d = Path(directory)
        self.trace.write(d)
        for name, rows in self.grids.items():
            write_grid(d / f"{name}.csv", rows, GRID_HEADER)


def _gp_settings(scn: Scenario):
    gp = scn["gp"]
    bounds = HyperBounds(
        signal_variance=tuple(gp.get("signal_variance_bounds", (1e-2, 1e2))),
        lengthscale=tuple(gp.get("lengthscale_bounds", (5e-2, 5.0))),
    )
    return float(gp.get("noise_variance", 1e-6)), int(gp.get("refit_every", 5)), int(gp.get("restarts", 3)), bounds


def _solver(scn: Scenario, seed: int) -> SolverConfig:
    s = scn["solver"]
    return SolverConfig(
        candidate_count=int(s.get("candidate_count", 512)),
        local_refine=int(s.get("local_refine", 200)),
        restarts=int(s.get("restarts", 4)),
        infeasibility_penalty=float(s.get("infeasibility_penalty", 1e6)),
        seed=seed,
    )


def _policy(scn: Scenario) -> WeightPolicy:
    return WeightPolicy(scn["weights"]["mode"], tuple(scn["weights"]["k"]))


def _meta(scn: Scenario, seed: int, picof: bool) -> dict:
    return {
        "scenario": scn.name,
        "scenario_sha256": scn.sha256,
        "scenario_source": scn.source,
        "config": scn.data,
        "seed": seed,
        "mode": "picof" if picof else "baseline",
    }


# -- toy ---------------------------------------------------------------------

def toy_problem(scn: Scenario) -> OuterProblem:
    limit = float(scn["limit"])

    def objective(t, x, p, s):
        return -p[0]

    def constraint(t, x, p, s, beta):
        return p[1] + beta * s[1] - limit

    return OuterProblem(
        objective, (constraint,), np.array([0.0]), np.array([2.0]),
        z=float(scn["z"]), beta=float(scn["beta"]), exploration=lambda s: s[0],
    )


def toy_bundle(scn: Scenario, plant: ToyPlant, seed: int) -> SurrogateBundle:
    noise, _, restarts, bounds = _gp_settings(scn)
    xs = np.asarray(scn["init_x"], dtype=float)
    ys = np.array([plant.observe(x) for x in xs])
    datasets = [
        Dataset(xs[:, None], ys[:, j], plant.lower, plant.upper, name)
        for j, name in enumerate(ToyPlant.channels)
    ]
    return build_bundle(datasets, noise_variance=noise, restarts=restarts, seed=seed, bounds=bounds)


def toy_grid(scn: Scenario, bundle: SurrogateBundle) -> list[tuple]:
    """Inner-only inference sweep of the corrected ``p2`` over the domain."""
    g = scn["grid"]
    xs = np.linspace(g["start"], g["stop"], int(g["points"]))
    sys = toy_balance()
    policy = _policy(scn)
    mode = CorrectionMode(scn["correction"])
    mu, sigma = bundle_predict(bundle, xs[:, None])
    rows = []
    for i, x in enumerate(xs):
        res = reconcile_point([x], mu[i], sigma[i], sys, mode, policy, bundle.scales)
        rows.append((x, float(toy_p2(x)), mu[i, 1], sigma[i, 1], res.p_tilde[1]))
    return rows


def run_toy(seed: int = 0, picof: bool = True, scenario: Scenario | str = "toy", **overrides) -> RunResult:
    scn = load_scenario(scenario, **overrides) if isinstance(scenario, str) else scenario
    plant = ToyPlant(scn.data.get("noise_std", (0.0, 0.0)), seed=seed)
    noise, refit_every, restarts, bounds = _gp_settings(scn)
    bundle = toy_bundle(scn, plant, seed)
    grids = {"grid_trial_first": toy_grid(scn, bundle)}
    loop = RtoLoop(
        plant=plant,
        bundle=bundle,
        system=toy_balance(),
        problem=toy_problem(scn),
        steps=scn.steps,
        mode=CorrectionMode(scn["correction"]),
        policy=_policy(scn),
        config=_solver(scn, seed),
        hyper=HyperSchedule(refit_every, restarts, seed, bounds),
        baseline=not picof,
    )
    loop.trace.meta = _meta(scn, seed, picof)
    loop.run()
    grids["grid_trial_last"] = toy_grid(scn, loop.bundle)
    return RunResult(loop.trace, loop.stats, grids, loop.bundle)


# -- fuel cell ---------------------------------------------------------------

def fc_stacks(scn: Scenario) -> list[FcStackParams]:
    return [FcStackParams(**s) for s in scn["stacks"]]


def fc_problem(scn: Scenario) -> OuterProblem:
    n = len(scn["stacks"])
    a1, a2, h2s = float(scn["alpha1"]), float(scn["alpha2"]), float(scn["h2_scale"])
    e_t, t_lim = float(scn["E_t"]), float(scn["T_lim"])
    upper = np.array([s["x_max"] for s in scn["stacks"]], dtype=float)

    def objective(t, x, p, s):
        ph = p[:n]
        return a1 * h2s * float(ph @ ph) + a2 * (e_t - float(np.sum(x))) ** 2

    def thermal(t, x, p, s, beta):
        return float(np.sum(p[n:] + beta * s[n:])) - t_lim

    return OuterProblem(
        objective, (thermal,), np.zeros(n), upper,
        z=float(scn["z"]), beta=float(scn["beta"]), exploration=lambda s: float(np.sum(s[:n])),
    )


def fc_pretrain(scn: Scenario, plant: FuelCellPlant, seed: int):
    """Seeded random safe setpoints, each held until the stacks settle.

    Returns achieved powers (inputs) and measured channels (outputs).
    """
    pre = scn["pretrain"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    X, Y = [], []
    for _ in range(int(pre["count"])):
        sp = rng.uniform(pre["low"], pre["high"], plant.n_stacks)
        obs = plant.step(sp, float(pre["settle"]))
        X.append(obs.inputs)
        Y.append(obs.outputs)
    return np.array(X), np.array(Y)


def fc_bundle(scn: Scenario, plant: FuelCellPlant, X, Y, seed: int) -> SurrogateBundle:
    noise, _, restarts, bounds = _gp_settings(scn)
    n = plant.n_stacks
    datasets, imap = [], []
    for j, name in enumerate(plant.channels):
        i = j % n
        datasets.append(Dataset(X[:, [i]], Y[:, j], [0.0], [plant.x_max[i]], name))
        imap.append((i,))
    return build_bundle(datasets, imap, noise, restarts, seed, bounds)


def run_fuelcell(seed: int = 0, picof: bool = True, scenario: Scenario | str = "fuelcell", **overrides) -> RunResult:
    scn = load_scenario(scenario, **overrides) if isinstance(scenario, str) else scenario
    sched = scn["schedule"]
    plant = FuelCellPlant(fc_stacks(scn), dt=float(sched.get("dt", 1.0)))
    X, Y = fc_pretrain(scn, plant, seed)
    plant.reset_counters()
    noise, refit_every, restarts, bounds = _gp_settings(scn)
    bundle = fc_bundle(scn, plant, X, Y, seed)
    loop = RtoLoop(
        plant=plant,
        bundle=bundle,
        system=fc_energy_balance(plant.n_stacks, float(scn["dh"])),
        problem=fc_problem(scn),
        steps=scn.steps,
        interval=float(sched["interval"]),
        mode=CorrectionMode(scn["correction"]),
        policy=_policy(scn),
        config=_solver(scn, seed),
        hyper=HyperSchedule(refit_every, restarts, seed, bounds),
        baseline=not picof,
    )
    loop.trace.meta = _meta(scn, seed, picof)
    loop.trace.meta["pretrain_inputs"] = X.tolist()
    loop.run()
    return RunResult(loop.trace, loop.stats, {}, loop.bundle)


# -- comparison --------------------------------------------------------------

class ScenarioMismatchError(ValueError):
    pass


@dataclass
class ComparisonReport:
    scenario: str
    seed: int
    runs: dict
    runtime_ratio: float | None
    checks: dict

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "runs": self.runs,
            "runtime_ratio": self.runtime_ratio,
            "checks": self.checks,
        }

    def write(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True))


def _run_summary(rows: list[dict], summary: dict) -> dict:
    k = sum(1 for c in rows[0] if c.startswith("slack_truth")) if rows else 0
    out = {
        "steps": len(rows),
        "violations": int(sum(1 for r in rows if r["violation"])),
        "objective_truth": [r["objective_truth"] for r in rows],
        "max_truth_constraint": max(
            (-r[f"slack_truth{i + 1}"] for r in rows for i in range(k)), default=None
        ),
        "wall_time": float(summary.get("wall_time_total", 0.0)),
    }
    if rows and "cumulative_h2" in rows[0]:
        out["cumulative_h2"] = rows[-1]["cumulative_h2"]
    if rows and "total_power" in rows[0]:
        out["total_power"] = [r["total_power"] for r in rows]
        out["total_thermal"] = [r["total_thermal"] for r in rows]
    return out


def compare(picof: tuple[list, dict], baseline: tuple[list, dict], h2_tolerance: float = 0.01) -> ComparisonReport:
    """Matched-seed comparison built only from stored traces."""
    (rows_p, sum_p), (rows_b, sum_b) = picof, baseline
    mp, mb = sum_p["meta"], sum_b["meta"]
    if mp["scenario"] != mb["scenario"] or mp["seed"] != mb["seed"]:
        raise ScenarioMismatchError(
            f"traces are not matched: {mp['scenario']}/{mp['seed']} vs {mb['scenario']}/{mb['seed']}"
        )
    if mp.get("mode") == mb.get("mode"):
        raise ScenarioMismatchError("both traces have the same mode")
    if mp.get("config", {}).get("kind") != mb.get("config", {}).get("kind"):
        raise ScenarioMismatchError("traces come from different scenario kinds")
    rp, rb = _run_summary(rows_p, sum_p), _run_summary(rows_b, sum_b)
    checks = {"violations_not_worse": rp["violations"] <= rb["violations"]}
    if "cumulative_h2" in rp and "cumulative_h2" in rb:
        checks["h2_not_worse"] = rp["cumulative_h2"] <= rb["cumulative_h2"] * (1 + h2_tolerance)
    ratio = rp["wall_time"] / rb["wall_time"] if rb["wall_time"] > 0 else None
    return ComparisonReport(mp["scenario"], int(mp["seed"]), {"picof": rp, "baseline": rb}, ratio, checks)


def compare_dirs(first, second) -> ComparisonReport:
    a, b = read_trace_table(first), read_trace_table(second)
    if a[1]["meta"].get("mode") == "baseline":
        a, b = b, a
    return compare(a, b)


def compare_results(picof: RunResult, baseline: RunResult) -> ComparisonReport:
    """Same as :func:`compare` but from in-memory traces (round-trips via CSV text)."""
    import csv
    import io

    def load(res: RunResult):
        rows = [
            {k: (float(v) if v != "" else None) for k, v in row.items()}
            for row in csv.DictReader(io.StringIO(res.trace.to_csv_text()))
        ]
        return rows, json.loads(json.dumps(res.trace.summary()))

    return compare(load(picof), load(baseline))


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start
