"""Per-step records of an RTO run and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    """Locale-free float text that round-trips exactly."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass
class TrialRecord:
    step: int
    time: float
    x: np.ndarray
    x_obs: np.ndarray
    y_obs: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    p_tilde: np.ndarray
    c_star: np.ndarray | None
    objective_pred: float
    objective_truth: float
    constraint_pred: np.ndarray
    constraint_truth: np.ndarray
    feasible_found: bool
    refined: bool
    inner_iterations: int | None = None
    inner_converged: bool | None = None
    residual_sq_before: float | None = None
    residual_sq_after: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def violation(self) -> bool:
        return bool(np.any(self.constraint_truth > 0))


@dataclass
class RunTrace:
    channels: list[str]
    n_inputs: int
    n_constraints: int
    meta: dict = field(default_factory=dict)
    records: list[TrialRecord] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    extras_keys: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: TrialRecord, wall: float):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("trace steps must increase")
        for k in rec.extras:
            if k not in self.extras_keys:
                self.extras_keys.append(k)
        self.records.append(rec)
        self.wall_times.append(float(wall))

    @property
    def violations(self) -> int:
        return sum(r.violation for r in self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.extras[name] for r in self.records], dtype=float)

    def header(self) -> list[str]:
        n, k = self.n_inputs, self.n_constraints
        ch = self.channels
        cols = ["step", "time"]
        cols += [f"x{i + 1}" for i in range(n)]
        cols += [f"x_obs{i + 1}" for i in range(n)]
        cols += [f"obs_{c}" for c in ch]
        cols += [f"mu_{c}" for c in ch]
        cols += [f"sigma_{c}" for c in ch]
        cols += [f"ptilde_{c}" for c in ch]
        cols += [f"c_{c}" for c in ch]
        cols += ["objective_pred", "objective_truth"]
        cols += [f"slack_pred{i + 1}" for i in range(k)]
        cols += [f"slack_truth{i + 1}" for i in range(k)]
        cols += ["violation", "feasible_found", "refined", "inner_iterations",
                 "inner_converged", "residual_sq_before", "residual_sq_after"]
        cols += list(self.extras_keys)
        return cols

    def rows(self):
        m = len(self.channels)
        for r in self.records:
            c_star = r.c_star if r.c_star is not None else [None] * m
            row = [fmt(r.step), fmt(r.time)]
            for arr in (r.x, r.x_obs, r.y_obs, r.mu, r.sigma, r.p_tilde, c_star):
                row += [fmt(v) for v in arr]
            row += [fmt(r.objective_pred), fmt(r.objective_truth)]
            # slack is reported as -g so that positive means satisfied
            row += [fmt(-v) for v in r.constraint_pred]
            row += [fmt(-v) for v in r.constraint_truth]
            row += [fmt(r.violation), fmt(r.feasible_found), fmt(r.refined),
                    fmt(r.inner_iterations), fmt(r.inner_converged),
                    fmt(r.residual_sq_before), fmt(r.residual_sq_after)]
            row += [fmt(r.extras.get(kx)) for kx in self.extras_keys]
            yield row

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerows(self.rows())
        return buf.getvalue()

    def summary(self) -> dict:
        out = {
            "meta": self.meta,
            "channels": self.channels,
            "steps": len(self.records),
            "violations": self.violations,
            "wall_time_total": float(sum(self.wall_times)),
            "wall_time_per_step": [float(v) for v in self.wall_times],
        }
        if self.records:
            out["final_objective_truth"] = float(self.records[-1].objective_truth)
            if "cumulative_h2" in self.extras_keys:
                out["cumulative_h2"] = float(self.records[-1].extras["cumulative_h2"])
        return out

    def write(self, directory: str | Path):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "trace.csv").write_text(self.to_csv_text())
        (d / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def write_grid(path: str | Path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_trace_table(directory: str | Path) -> tuple[list[dict], dict]:
    """Load ``trace.csv`` rows (as str->float dicts) and ``summary.json``."""
    d = Path(directory)
    with open(d / "trace.csv", newline="") as fh:
        rows = [
            {k: (float(v) if v != "" else None) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
    summary = json.loads((d / "summary.json").read_text())
    return rows, summary
