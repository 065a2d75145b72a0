"""Physics residual systems ``F(x, p) = 0`` over corrected outputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-6
AFFINE_TOL = 1e-10

__all__ = [
    "PhysicsSystem",
    "NonFiniteResidualError",
    "residuals",
    "jacobian_wrt_outputs",
    "toy_balance",
    "fc_energy_balance",
    "get_system",
    "REGISTRY",
]


class NonFiniteResidualError(ValueError):
    def __init__(self, index, what="residual"):
        super().__init__(f"non-finite {what} at index {index}")
        self.index = index


ResidualFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PhysicsSystem:
    """``q`` residual equations in ``n`` inputs and ``m`` outputs.

    Residuals are evaluated on physical scales. Systems declared ``affine``
    are checked once at construction: for random perturbations ``d`` the
    residual change must equal ``J @ d``.
    """

    n: int
    m: int
    q: int
    residual_fn: ResidualFn
    jacobian_fn: Optional[JacobianFn] = None
    affine: bool = False
    name: str = "custom"
    check_seed: int = 0
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.q >= self.m:
            self.diagnostics["overdetermined"] = True
        if self.affine:
            self._verify_affine()

    def _verify_affine(self, trials: int = 5):
        rng = np.random.default_rng(self.check_seed)
        for _ in range(trials):
            x = rng.standard_normal(self.n)
            p = rng.standard_normal(self.m)
            d = rng.standard_normal(self.m)
            r0 = residuals(self, x, p)
            r1 = residuals(self, x, p + d)
            J = jacobian_wrt_outputs(self, x, p)
            gap = np.max(np.abs(r1 - r0 - J @ d), initial=0.0)
            scale = max(1.0, float(np.max(np.abs(np.concatenate([r0, r1])), initial=0.0)))
            if gap > AFFINE_TOL * scale:
                raise ValueError(f"system {self.name!r} is declared affine but is not (gap {gap:.3g})")


def residuals(sys: PhysicsSystem, x, p) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    if x.shape[0] != sys.n or p.shape[0] != sys.m:
        raise ValueError(
            f"system {sys.name!r} expects x of size {sys.n} and p of size {sys.m}, "
            f"got {x.shape[0]} and {p.shape[0]}"
        )
    r = np.asarray(sys.residual_fn(x, p), dtype=float).reshape(-1)
    if r.shape[0] != sys.q:
        raise ValueError(f"system {sys.name!r} returned {r.shape[0]} residuals, expected {sys.q}")
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise NonFiniteResidualError(int(bad[0]))
    return r


def _fd_jacobian(sys: PhysicsSystem, x, p, scale) -> np.ndarray:
    J = np.empty((sys.q, sys.m))
    for j in range(sys.m):
        h = FD_STEP * scale[j]
        e = np.zeros(sys.m)
        e[j] = h
        J[:, j] = (residuals(sys, x, p + e) - residuals(sys, x, p - e)) / (2 * h)
    return J


def jacobian_wrt_outputs(sys: PhysicsSystem, x, p, scale=None) -> np.ndarray:
    """``q x m`` Jacobian of the residuals with respect to the outputs.

    Falls back to central differences with step ``1e-6 * scale`` when the
    system has no analytic Jacobian.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    if sys.jacobian_fn is not None:
        J = np.asarray(sys.jacobian_fn(x, p), dtype=float).reshape(sys.q, sys.m)
    else:
        scale = np.ones(sys.m) if scale is None else np.asarray(scale, dtype=float)
        J = _fd_jacobian(sys, x, p, scale)
    bad = np.argwhere(~np.isfinite(J))
    if bad.size:
        raise NonFiniteResidualError(tuple(int(i) for i in bad[0]), "jacobian entry")
    return J


def toy_balance(slope: float = 140.0) -> PhysicsSystem:
    """Single balance ``slope * x - p1 - p2 = 0`` of the 1-D toy plant."""

    def res(x, p):
        return np.array([slope * x[0] - p[0] - p[1]])

    def jac(x, p):
        return np.array([[-1.0, -1.0]])

    return PhysicsSystem(1, 2, 1, res, jac, affine=True, name="toy-balance")


def fc_energy_balance(n_stacks: int = 5, dh: float = 285.8) -> PhysicsSystem:
    """Per-stack energy balance ``p_h * dH - p_th - x = 0``.

    Outputs are ordered ``[p_h_1..p_h_n, p_th_1..p_th_n]``.
    """
    J = np.hstack([dh * np.eye(n_stacks), -np.eye(n_stacks)])

    def res(x, p):
        return dh * p[:n_stacks] - p[n_stacks:] - x

    def jac(x, p):
        return J.copy()

    return PhysicsSystem(
        n_stacks, 2 * n_stacks, n_stacks, res, jac, affine=True, name="fc-energy-balance"
    )


REGISTRY = {
    "toy-balance": toy_balance,
    "fc-energy-balance": fc_energy_balance,
}


def get_system(name: str, **kwargs) -> PhysicsSystem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown physics system {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**kwargs)
