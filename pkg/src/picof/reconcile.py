"""Inner reconciliation problem: correction factors that trade physics
residuals against a weighted penalty on the size of the correction.

For a query point ``x`` with surrogate means ``mu`` the corrected outputs are

* additive:        ``p = mu + c``
* multiplicative:  ``p = c * mu``

and the factors minimize ``sum_i F_i(x, p)**2 + sum_j w_j * pen_j(c_j)``.
The penalty acts on normalized corrections: ``(c_j / s_j)**2`` for additive
factors (``s_j`` being the channel's output scale) and ``(c_j - 1)**2`` for
multiplicative ones. Both forms are handled by one shifted variable ``v``
with ``p = mu + D * v`` and ``v = 0`` meaning "no correction".
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .gp import SurrogateBundle, bundle_predict
from .physics import PhysicsSystem, jacobian_wrt_outputs, residuals

__all__ = [
    "CorrectionMode",
    "WeightMode",
    "WeightPolicy",
    "GaussNewtonOptions",
    "ReconciliationResult",
    "ReconcileError",
    "compute_weights",
    "solve_affine",
    "solve_gauss_newton",
    "reconcile",
    "reconcile_point",
    "identity_element",
    "objective_h",
]


class ReconcileError(ValueError):
    pass


class CorrectionMode(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class WeightMode(str, enum.Enum):
    CONSTANT = "constant"
    SIGMA_SCALED = "sigma_scaled"
    SIGMA_INVERSE = "sigma_inverse"


@dataclass(frozen=True)
class WeightPolicy:
    mode: WeightMode = WeightMode.SIGMA_SCALED
    k: tuple[float, ...] = (1.0,)
    floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "mode", WeightMode(self.mode))
        object.__setattr__(self, "k", tuple(float(v) for v in np.atleast_1d(self.k)))
        if any(not v > 0 for v in self.k):
            raise ReconcileError("weight coefficients must be positive")
        if not self.floor > 0:
            raise ReconcileError("weight floor must be positive")


def compute_weights(policy: WeightPolicy, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if np.any(sigma < 0):
        raise ReconcileError("sigma must be non-negative")
    k = np.asarray(policy.k, dtype=float)
    if k.size == 1:
        k = np.full(sigma.shape, k[0])
    if k.shape != sigma.shape:
        raise ReconcileError(f"{k.size} weight coefficients for {sigma.size} outputs")
    if policy.mode is WeightMode.CONSTANT:
        w = k.copy()
    elif policy.mode is WeightMode.SIGMA_SCALED:
        w = k * sigma
    else:
        w = k / np.maximum(sigma, policy.floor)
    return np.maximum(w, policy.floor)


@dataclass(frozen=True)
class GaussNewtonOptions:
    max_iter: int = 100
    tol_grad: float = 1e-8
    tol_step: float = 1e-10
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 60


@dataclass
class ReconciliationResult:
    c_star: np.ndarray
    p_tilde: np.ndarray
    residual_before: np.ndarray
    residual_after: np.ndarray
    h_value: float
    h_identity: float
    iterations: int
    converged: bool
    gradient_norm: float
    weights: np.ndarray
    history: list = field(default_factory=list, repr=False)

    @property
    def residual_sq_before(self) -> float:
        return float(self.residual_before @ self.residual_before)

    @property
    def residual_sq_after(self) -> float:
        return float(self.residual_after @ self.residual_after)


def identity_element(mode: CorrectionMode, m: int) -> np.ndarray:
    if CorrectionMode(mode) is CorrectionMode.ADDITIVE:
        return np.zeros(m)
    return np.ones(m)


class _Problem:
    """Shifted-variable view of h for one query point."""

    def __init__(self, x, mu, sys, mode, weights, scales, literal_penalty):
        self.x = np.asarray(x, dtype=float).reshape(-1)
        self.mu = np.asarray(mu, dtype=float).reshape(-1)
        self.sys = sys
        self.mode = CorrectionMode(mode)
        self.w = np.asarray(weights, dtype=float).reshape(-1)
        m = self.mu.shape[0]
        if self.w.shape[0] != m:
            raise ReconcileError(f"{self.w.shape[0]} weights for {m} outputs")
        if np.any(~(self.w > 0)):
            raise ReconcileError("weights must be strictly positive")
        self.scales = np.ones(m) if scales is None else np.asarray(scales, dtype=float)
        if self.mode is CorrectionMode.ADDITIVE:
            self.D = self.scales
            self.v0 = np.zeros(m)
        else:
            self.D = self.mu.copy()
            # literal penalty sum w c^2 is centred at c = 0, i.e. v = -1
            self.v0 = -np.ones(m) if literal_penalty else np.zeros(m)

    def p_of(self, v):
        return self.mu + self.D * v

    def c_of(self, v):
        if self.mode is CorrectionMode.ADDITIVE:
            return self.D * v
        return 1.0 + v

    def r(self, v):
        return residuals(self.sys, self.x, self.p_of(v))

    def h(self, v, r=None):
        r = self.r(v) if r is None else r
        dv = v - self.v0
        return float(r @ r + self.w @ (dv * dv))

    def A(self, v):
        return jacobian_wrt_outputs(self.sys, self.x, self.p_of(v), self.scales) * self.D

    def grad(self, v, r, A):
        return 2.0 * (A.T @ r + self.w * (v - self.v0))

    def normal_solve(self, A, rhs):
        M = A.T @ A + np.diag(self.w)
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise ReconcileError("regularized normal equations are singular") from exc

    def result(self, v, iterations, converged, history, r_before=None, r_after=None, A=None):
        zero = np.zeros_like(self.mu)
        r_before = self.r(zero) if r_before is None else r_before
        r_after = self.r(v) if r_after is None else r_after
        A = self.A(v) if A is None else A
        g = self.grad(v, r_after, A)
        return ReconciliationResult(
            c_star=self.c_of(v),
            p_tilde=self.p_of(v),
            residual_before=r_before,
            residual_after=r_after,
            h_value=self.h(v, r_after),
            h_identity=self.h(zero, r_before),
            iterations=iterations,
            converged=converged,
            gradient_norm=float(np.max(np.abs(g), initial=0.0)),
            weights=self.w,
            history=history,
        )


def solve_affine(
    x, mu, sys: PhysicsSystem, mode, weights, scales=None, literal_penalty=False
) -> ReconciliationResult:
    """Closed-form minimizer for residuals affine in the corrected outputs.

    Solves ``(A^T A + diag(w)) v = -A^T r0 + diag(w) v0`` followed by one
    step of iterative refinement.
    """
    if not sys.affine:
        raise ReconcileError(f"system {sys.name!r} is not flagged affine")
    prob = _Problem(x, mu, sys, mode, weights, scales, literal_penalty)
    zero = np.zeros_like(prob.mu)
    A = prob.A(zero)
    r0 = prob.r(zero)
    M = A.T @ A + np.diag(prob.w)
    try:
        cf = cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise ReconcileError("regularized normal equations are singular") from exc
    v = cho_solve(cf, -(A.T @ r0) + prob.w * prob.v0)
    r = prob.r(v)
    # one step of iterative refinement
    v = v - cho_solve(cf, A.T @ r + prob.w * (v - prob.v0))
    r = prob.r(v)
    h0 = prob.h(zero, r0)
    return prob.result(v, 1, True, [h0, prob.h(v, r)], r0, r, A)


def solve_gauss_newton(
    x,
    mu,
    sys: PhysicsSystem,
    mode,
    weights,
    opts: GaussNewtonOptions | None = None,
    scales=None,
    literal_penalty=False,
) -> ReconciliationResult:
    """Damped Gauss-Newton with Armijo backtracking, started at the identity.

    Each accepted step satisfies the Armijo condition so the sequence of
    objective values never increases.
    """
    opts = opts or GaussNewtonOptions()
    prob = _Problem(x, mu, sys, mode, weights, scales, literal_penalty)
    v = np.zeros_like(prob.mu)
    r = prob.r(v)
    h = prob.h(v, r)
    history = [h]
    converged = False
    it = 0
    while it < opts.max_iter:
        A = prob.A(v)
        g = prob.grad(v, r, A)
        if np.max(np.abs(g), initial=0.0) <= opts.tol_grad:
            converged = True
            break
        step = prob.normal_solve(A, -0.5 * g)
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        alpha = 1.0
        for _ in range(opts.max_backtracks):
            v_try = v + alpha * step
            r_try = prob.r(v_try)
            h_try = prob.h(v_try, r_try)
            if h_try <= h + opts.armijo * alpha * slope:
                break
            alpha *= opts.backtrack
        else:
            break
        it += 1
        v, r, h = v_try, r_try, h_try
        history.append(h)
        if alpha * np.max(np.abs(step), initial=0.0) <= opts.tol_step:
            A = prob.A(v)
            converged = np.max(np.abs(prob.grad(v, r, A)), initial=0.0) <= opts.tol_grad
            break
    return prob.result(v, it, converged, history)


def reconcile_point(
    x,
    mu,
    sigma,
    sys: PhysicsSystem,
    mode,
    policy: WeightPolicy,
    scales=None,
    opts: GaussNewtonOptions | None = None,
    literal_penalty: bool = False,
) -> ReconciliationResult:
    """Weights from normalized ``sigma``, then the affine or Gauss-Newton path."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    s = np.ones_like(mu) if scales is None else np.asarray(scales, dtype=float)
    weights = compute_weights(policy, sigma / s)
    if sys.affine:
        return solve_affine(x, mu, sys, mode, weights, s, literal_penalty)
    return solve_gauss_newton(x, mu, sys, mode, weights, opts, s, literal_penalty)


def reconcile(
    x,
    bundle: SurrogateBundle,
    sys: PhysicsSystem,
    mode,
    policy: WeightPolicy,
    opts: GaussNewtonOptions | None = None,
    literal_penalty: bool = False,
) -> ReconciliationResult:
    mu, sigma = bundle_predict(bundle, x)
    return reconcile_point(
        x, mu, sigma, sys, mode, policy, bundle.scales, opts, literal_penalty
    )


def objective_h(x, c, mu, sys, mode, weights, scales=None, literal_penalty=False) -> float:
    """Evaluate h at an explicit correction vector ``c`` (used by tests/oracles)."""
    prob = _Problem(x, mu, sys, mode, weights, scales, literal_penalty)
    c = np.asarray(c, dtype=float)
    if prob.mode is CorrectionMode.ADDITIVE:
        v = c / prob.D
    else:
        v = c - 1.0
    return prob.h(v)
