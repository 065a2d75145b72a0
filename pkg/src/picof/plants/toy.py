"""One-input, two-output toy system with a known linear balance."""

from __future__ import annotations

import copy

import numpy as np

from .base import Observation

X_MIN, X_MAX = 0.0, 2.0


def toy_p1(x):
    x = np.asarray(x, dtype=float)
    return 120.0 * np.sin(0.6 * x) + 10.0 * np.cos(5.0 * x) - 10.0


def toy_p2(x):
    return 140.0 * np.asarray(x, dtype=float) - toy_p1(x)


class ToyPlant:
    channels = ("p1", "p2")

    def __init__(self, noise_std=(0.0, 0.0), seed: int = 0):
        self.noise_std = np.broadcast_to(np.asarray(noise_std, dtype=float), (2,)).copy()
        self.rng = np.random.default_rng(seed)
        self.lower = np.array([X_MIN])
        self.upper = np.array([X_MAX])

    def observe(self, x) -> tuple[float, float]:
        x = float(np.asarray(x, dtype=float).reshape(-1)[0])
        if not X_MIN <= x <= X_MAX:
            raise ValueError(f"x={x} outside the toy domain [{X_MIN}, {X_MAX}]")
        p1 = float(toy_p1(x))
        p2 = 140.0 * x - p1
        if np.any(self.noise_std > 0):
            e = self.rng.standard_normal(2) * self.noise_std
            p1, p2 = p1 + float(e[0]), p2 + float(e[1])
        return p1, p2

    def implement(self, x) -> Observation:
        x = np.asarray(x, dtype=float).reshape(-1)
        return Observation(x.copy(), np.array(self.observe(x)))

    def clone(self) -> "ToyPlant":
        return copy.deepcopy(self)
