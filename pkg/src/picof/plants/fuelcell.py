"""Parametric multi-stack fuel-cell plant.

Each stack tracks its electric power setpoint with first-order dynamics.
Hydrogen use follows from a quadratic efficiency curve over the load
fraction, and the thermal load closes the energy balance exactly::

    p_h  = x / (eta(u) * dH)          [mol/s]
    p_th = p_h * dH - x               [kW]
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np

from .base import Observation

_log = logging.getLogger(__name__)

DH_RXN = 285.8  # kJ/mol, hydrogen HHV


@dataclass(frozen=True)
class FcStackParams:
    a: float
    b: float
    cq: float
    x_max: float = 100.0
    tau: float = 30.0
    dh: float = DH_RXN

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("stack time constant must be positive")
        u = np.linspace(0.05, 1.0, 200)
        eta = self.efficiency(u)
        if np.any(eta <= 0) or np.any(eta >= 1):
            raise ValueError("efficiency must lie in (0, 1) over the load range")

    @classmethod
    def from_peak(cls, eta_peak, u_peak, curvature, **kw) -> "FcStackParams":
        """Build from ``eta = eta_peak - curvature * (u - u_peak)**2``."""
        return cls(
            a=eta_peak - curvature * u_peak**2,
            b=2.0 * curvature * u_peak,
            cq=-curvature,
            **kw,
        )

    def efficiency(self, u):
        u = np.asarray(u, dtype=float)
        return self.a + self.b * u + self.cq * u * u

    def hydrogen_rate(self, x):
        x = np.asarray(x, dtype=float)
        u = np.clip(x / self.x_max, 0.05, 1.0)
        return x / (self.efficiency(u) * self.dh)

    def thermal_load(self, x):
        x = np.asarray(x, dtype=float)
        return self.hydrogen_rate(x) * self.dh - x

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("a", "b", "cq", "x_max", "tau", "dh")}


# peak efficiency, load fraction at peak, curvature, time constant
_DEFAULT_SHAPES = [
    (0.58, 0.50, 0.12, 20.0),
    (0.56, 0.45, 0.15, 30.0),
    (0.53, 0.50, 0.17, 40.0),
    (0.48, 0.30, 0.30, 50.0),
    (0.45, 0.30, 0.30, 60.0),
]


def default_stacks() -> list[FcStackParams]:
    return [FcStackParams.from_peak(e, u, k, tau=tau) for e, u, k, tau in _DEFAULT_SHAPES]


class FuelCellPlant:
    """Stateful simulator of parallel stacks; one owner mutates it."""

    def __init__(self, stacks, dt: float = 1.0, initial_power=None):
        self.stacks = list(stacks)
        self.dt = float(dt)
        if any(self.dt > s.tau / 10 for s in self.stacks):
            raise ValueError("integration step must not exceed a tenth of every time constant")
        n = len(self.stacks)
        self.x_max = np.array([s.x_max for s in self.stacks])
        self.tau = np.array([s.tau for s in self.stacks])
        self.lower = np.zeros(n)
        self.upper = self.x_max.copy()
        self.state = np.zeros(n) if initial_power is None else np.asarray(initial_power, float).copy()
        self.time = 0.0
        self.cumulative_h2 = 0.0

    @property
    def n_stacks(self) -> int:
        return len(self.stacks)

    @property
    def channels(self) -> tuple[str, ...]:
        n = self.n_stacks
        return tuple(f"p_h{i + 1}" for i in range(n)) + tuple(f"p_th{i + 1}" for i in range(n))

    def hydrogen_rates(self, x=None) -> np.ndarray:
        x = self.state if x is None else x
        return np.array([s.hydrogen_rate(xi) for s, xi in zip(self.stacks, x)])

    def thermal_loads(self, x=None) -> np.ndarray:
        x = self.state if x is None else x
        h = self.hydrogen_rates(x)
        dh = np.array([s.dh for s in self.stacks])
        return h * dh - x

    def step(self, setpoints, horizon: float) -> Observation:
        """Hold ``setpoints`` for ``horizon`` seconds and sample the plant."""
        sp = np.asarray(setpoints, dtype=float).reshape(-1)
        if sp.shape[0] != self.n_stacks:
            raise ValueError(f"expected {self.n_stacks} setpoints, got {sp.shape[0]}")
        clipped = np.clip(sp, 0.0, self.x_max)
        if np.any(clipped != sp):
            _log.warning("setpoints %s clamped to stack limits", sp)
        steps = horizon / self.dt
        n_steps = int(round(steps))
        if n_steps < 0 or not math.isclose(steps, n_steps, abs_tol=1e-9):
            raise ValueError("horizon must be a non-negative multiple of dt")
        decay = np.exp(-self.dt / self.tau)
        rate = self.hydrogen_rates().sum()
        for _ in range(n_steps):
            # zero-order-hold solution of tau * dx/dt = sp - x
            self.state = clipped + (self.state - clipped) * decay
            new_rate = self.hydrogen_rates().sum()
            self.cumulative_h2 += 0.5 * (rate + new_rate) * self.dt
            rate = new_rate
        self.time += n_steps * self.dt
        return self.observe()

    def observe(self) -> Observation:
        x = self.state.copy()
        ph = self.hydrogen_rates(x)
        pth = self.thermal_loads(x)
        total_power, total_thermal, total_h2, cum = self.totals()
        return Observation(
            x,
            np.concatenate([ph, pth]),
            {
                "total_power": total_power,
                "total_thermal": total_thermal,
                "total_h2_rate": total_h2,
                "cumulative_h2": cum,
            },
        )

    def implement(self, setpoints, horizon: float) -> Observation:
        return self.step(setpoints, horizon)

    def totals(self) -> tuple[float, float, float, float]:
        return (
            float(self.state.sum()),
            float(self.thermal_loads().sum()),
            float(self.hydrogen_rates().sum()),
            float(self.cumulative_h2),
        )

    def reset_counters(self):
        self.cumulative_h2 = 0.0
        self.time = 0.0

    def clone(self) -> "FuelCellPlant":
        return copy.deepcopy(self)
