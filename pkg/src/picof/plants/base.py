from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Observation:
    """What the plant reveals after a setpoint is implemented.

    ``inputs`` are the realized decision values (e.g. achieved power), which
    may differ from the requested setpoint; ``outputs`` are the measured
    channels in bundle order.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    extras: dict = field(default_factory=dict)
