"""Outer problem of the bilevel program and the closed RTO loop.

At every candidate ``x`` the surrogate means are reconciled with the physics
(unless running as the uncorrected baseline) and the corrected predictions
feed the gray-box objective and constraints::

    minimize  f(t, x, p) - z * explore(sigma)
    s.t.      g_k(t, x, p, sigma, beta) <= 0

The outer solver is derivative-free: scrambled Sobol candidates followed by
a few Nelder-Mead refinements on a quadratic-penalty merit function.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .gp import HyperBounds, SurrogateBundle, bundle_predict
from .physics import PhysicsSystem
from .plants.base import Observation
from .reconcile import (
    CorrectionMode,
    GaussNewtonOptions,
    ReconciliationResult,
    WeightPolicy,
    reconcile_point,
)
from .trace import RunTrace, TrialRecord

_log = logging.getLogger(__name__)

Objective = Callable[[int, np.ndarray, np.ndarray, np.ndarray], float]
Constraint = Callable[[int, np.ndarray, np.ndarray, np.ndarray, float], float]


@dataclass(frozen=True)
class OuterProblem:
    """Gray-box objective/constraints over corrected predictions.

    ``objective`` is the known-form ``f``; the exploration bonus
    ``z * exploration(sigma)`` is subtracted by :func:`evaluate`. Each
    constraint closure composes its own confidence shift with ``beta``.
    """

    objective: Objective
    constraints: tuple[Constraint, ...]
    lower: np.ndarray
    upper: np.ndarray
    z: float = 0.0
    beta: float = 2.0
    exploration: Callable[[np.ndarray], float] = lambda s: 0.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("bounds must be finite and of equal length")
        if np.any(hi <= lo):
            raise ValueError("bounds must be non-degenerate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def n(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class SolverConfig:
    candidate_count: int = 512
    grid_points: int = 101
    local_refine: int = 200
    restarts: int = 4
    seed: int = 0
    infeasibility_penalty: float = 1e6

    def __post_init__(self):
        for name in ("candidate_count", "local_refine", "restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass
class InnerStats:
    """Running audit of every reconcile call made by the outer solver."""

    calls: int = 0
    nonconverged: int = 0
    max_excess: float = -np.inf
    excess_violations: int = 0
    tol: float = 1e-12

    def update(self, res: ReconciliationResult):
        self.calls += 1
        if not res.converged:
            self.nonconverged += 1
        excess = res.residual_sq_after - res.residual_sq_before
        self.max_excess = max(self.max_excess, excess)
        if excess > self.tol:
            self.excess_violations += 1


@dataclass
class Evaluation:
    x: np.ndarray
    objective: float
    constraints: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    p_tilde: np.ndarray
    inner: ReconciliationResult | None

    @property
    def violation(self) -> float:
        return float(np.sum(np.maximum(self.constraints, 0.0)))

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.constraints <= 0.0))


@dataclass
class Evaluator:
    """Everything needed to score a candidate at a fixed model state."""

    problem: OuterProblem
    bundle: SurrogateBundle
    system: PhysicsSystem | None
    mode: CorrectionMode = CorrectionMode.ADDITIVE
    policy: WeightPolicy = field(default_factory=WeightPolicy)
    baseline: bool = False
    gn_options: GaussNewtonOptions | None = None
    literal_penalty: bool = False
    stats: InnerStats | None = None

    def _score(self, t, x, mu, sigma) -> Evaluation:
        inner = None
        if self.baseline or self.system is None:
            p_tilde = mu.copy()
        else:
            inner = reconcile_point(
                x, mu, sigma, self.system, self.mode, self.policy,
                self.bundle.scales, self.gn_options, self.literal_penalty,
            )
            if self.stats is not None:
                self.stats.update(inner)
            if not inner.converged:
                _log.debug("inner problem did not converge at x=%s", x)
            p_tilde = inner.p_tilde
        pb = self.problem
        obj = pb.objective(t, x, p_tilde, sigma) - pb.z * pb.exploration(sigma)
        cons = np.array([g(t, x, p_tilde, sigma, pb.beta) for g in pb.constraints], dtype=float)
        if not np.isfinite(obj) or not np.all(np.isfinite(cons)):
            raise FloatingPointError(f"non-finite outer evaluation at x={x}")
        return Evaluation(x.copy(), float(obj), cons, mu, sigma, p_tilde, inner)

    def __call__(self, t, x) -> Evaluation:
        x = np.asarray(x, dtype=float).reshape(-1)
        mu, sigma = bundle_predict(self.bundle, x)
        return self._score(t, x, mu, sigma)

    def batch(self, t, X) -> list[Evaluation]:
        X = np.asarray(X, dtype=float).reshape(-1, self.problem.n)
        mu, sigma = bundle_predict(self.bundle, X)
        return [self._score(t, X[i], mu[i], sigma[i]) for i in range(X.shape[0])]


def evaluate(
    t,
    x,
    problem: OuterProblem,
    bundle: SurrogateBundle,
    system: PhysicsSystem | None,
    mode=CorrectionMode.ADDITIVE,
    policy: WeightPolicy | None = None,
    baseline: bool = False,
) -> Evaluation:
    ev = Evaluator(problem, bundle, system, CorrectionMode(mode), policy or WeightPolicy(), baseline)
    return ev(t, x)


@dataclass
class OuterDiagnostics:
    n_candidates: int
    n_feasible: int
    feasible_found: bool
    refined: bool
    best_candidate: Evaluation
    chosen: Evaluation


def candidate_points(problem: OuterProblem, config: SolverConfig, t: int) -> np.ndarray:
    """Scrambled Sobol points in the box, seeded by ``(seed, t)``.

    One-dimensional problems also get a uniform grid.
    """
    ss = np.random.SeedSequence([config.seed, int(t)])
    rng = np.random.default_rng(ss)
    sampler = qmc.Sobol(problem.n, scramble=True, seed=rng)
    count = config.candidate_count
    if count & (count - 1) == 0:
        u = sampler.random_base2(int(np.log2(count)))
    else:
        u = sampler.random(count)
    pts = qmc.scale(u, problem.lower, problem.upper) if problem.n > 0 else u
    if problem.n == 1 and config.grid_points > 1:
        grid = np.linspace(problem.lower[0], problem.upper[0], config.grid_points)[:, None]
        pts = np.vstack([pts, grid])
    return pts


def _better(a: Evaluation, b: Evaluation | None) -> bool:
    """Feasible beats infeasible; then lower objective / lower violation."""
    if b is None:
        return True
    if a.feasible != b.feasible:
        return a.feasible
    if a.feasible:
        return a.objective < b.objective
    return a.violation < b.violation


def solve_outer(t, evaluator: Evaluator, config: SolverConfig) -> tuple[np.ndarray, OuterDiagnostics]:
    problem = evaluator.problem
    X = candidate_points(problem, config, t)
    evals = evaluator.batch(t, X)
    n_feasible = sum(e.feasible for e in evals)

    order = sorted(
        range(len(evals)),
        key=lambda i: (not evals[i].feasible,
                       evals[i].objective if evals[i].feasible else evals[i].violation),
    )
    incumbent = evals[order[0]]
    best_candidate = incumbent

    lo, hi = problem.lower, problem.upper
    span = hi - lo
    penalty = config.infeasibility_penalty

    def merit(xv):
        e = evaluator(t, np.clip(xv, lo, hi))
        return e.objective + penalty * float(np.sum(np.maximum(e.constraints, 0.0) ** 2))

    starts, seen = [], []
    for i in order:
        xi = evals[i].x
        if all(np.max(np.abs(xi - s) / span) > 1e-3 for s in seen):
            starts.append(xi)
            seen.append(xi)
        if len(starts) >= config.restarts:
            break

    refined = False
    for x0 in starts:
        simplex = [x0]
        for k in range(problem.n):
            step = np.zeros(problem.n)
            step[k] = 0.05 * span[k] if x0[k] + 0.05 * span[k] <= hi[k] else -0.05 * span[k]
            simplex.append(x0 + step)
        res = minimize(
            merit, x0, method="Nelder-Mead",
            options={"maxiter": config.local_refine, "initial_simplex": np.array(simplex),
                     "xatol": 1e-6 * float(np.max(span)), "fatol": 1e-10},
        )
        cand = evaluator(t, np.clip(res.x, lo, hi))
        # accept only feasible improvements (or reduced violation with no feasible incumbent)
        if cand.feasible or not incumbent.feasible:
            if _better(cand, incumbent):
                incumbent = cand
                refined = True

    diag = OuterDiagnostics(len(evals), n_feasible, incumbent.feasible, refined,
                            best_candidate, incumbent)
    if not incumbent.feasible:
        _log.info("t=%s: no feasible candidate; using minimal-violation point", t)
    return incumbent.x.copy(), diag


@dataclass
class HyperSchedule:
    refit_every: int = 5
    restarts: int = 3
    seed: int = 0
    bounds: HyperBounds | None = None


@dataclass
class RtoLoop:
    """Closed loop: solve outer problem, implement, observe, refit GPs."""

    plant: object
    bundle: SurrogateBundle
    system: PhysicsSystem | None
    problem: OuterProblem
    steps: int
    interval: float | None = None
    mode: CorrectionMode = CorrectionMode.ADDITIVE
    policy: WeightPolicy = field(default_factory=WeightPolicy)
    config: SolverConfig = field(default_factory=SolverConfig)
    hyper: HyperSchedule = field(default_factory=HyperSchedule)
    baseline: bool = False
    gn_options: GaussNewtonOptions | None = None
    literal_penalty: bool = False
    trace: RunTrace | None = None
    stats: InnerStats = field(default_factory=InnerStats)
    channel_names: Sequence[str] | None = None
    _since_opt: int = 0

    def __post_init__(self):
        if self.trace is None:
            names = list(self.channel_names or self.bundle.names)
            self.trace = RunTrace(names, self.problem.n, len(self.problem.constraints))

    def evaluator(self) -> Evaluator:
        return Evaluator(
            self.problem, self.bundle, self.system, self.mode, self.policy,
            self.baseline, self.gn_options, self.literal_penalty, self.stats,
        )

    def _implement(self, x) -> Observation:
        if self.interval is None:
            return self.plant.implement(x)
        return self.plant.implement(x, self.interval)

    def truth(self, t, obs: Observation) -> tuple[float, np.ndarray]:
        """Objective and constraints on measured outputs, without sigma terms."""
        zero = np.zeros_like(obs.outputs)
        pb = self.problem
        obj = float(pb.objective(t, obs.inputs, obs.outputs, zero))
        cons = np.array([g(t, obs.inputs, obs.outputs, zero, 0.0) for g in pb.constraints])
        return obj, cons

    def step(self, t: int) -> TrialRecord:
        start = time.perf_counter()
        x_star, diag = solve_outer(t, self.evaluator(), self.config)
        obs = self._implement(x_star)
        obj_truth, cons_truth = self.truth(t, obs)

        self._since_opt += 1
        optimize = self._since_opt >= self.hyper.refit_every
        if optimize:
            self._since_opt = 0
        self.bundle = self.bundle.refit(
            obs.inputs, obs.outputs, optimize=optimize, restarts=self.hyper.restarts,
            seed=self.hyper.seed + 1000 * int(t), bounds=self.hyper.bounds,
        )

        ch = diag.chosen
        inner = ch.inner
        rec = TrialRecord(
            step=int(t),
            time=float(t * self.interval) if self.interval is not None else float(t),
            x=x_star,
            x_obs=obs.inputs,
            y_obs=obs.outputs,
            mu=ch.mu,
            sigma=ch.sigma,
            p_tilde=ch.p_tilde,
            c_star=None if inner is None else inner.c_star,
            objective_pred=ch.objective,
            objective_truth=obj_truth,
            constraint_pred=ch.constraints,
            constraint_truth=cons_truth,
            feasible_found=diag.feasible_found,
            refined=diag.refined,
            inner_iterations=None if inner is None else inner.iterations,
            inner_converged=None if inner is None else inner.converged,
            residual_sq_before=None if inner is None else inner.residual_sq_before,
            residual_sq_after=None if inner is None else inner.residual_sq_after,
            extras=dict(obs.extras),
        )
        self.trace.append(rec, time.perf_counter() - start)
        return rec

    def run(self) -> RunTrace:
        for t in range(len(self.trace) + 1, self.steps + 1):
            self.step(t)
        return self.trace


