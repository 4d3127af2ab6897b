"""Fixed-step RK4 integration and control-energy functionals."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimensionError, DivergenceError

Rhs = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
ControlFn = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps

    @property
    def horizon(self) -> float:
        return self.t_end - self.t_start

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(self.steps + 1)

    def stage_times(self) -> np.ndarray:
        """Node and midpoint times, ``2*steps + 1`` values; even indices are nodes."""
        return self.t_start + 0.5 * self.h * np.arange(2 * self.steps + 1)


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (steps+1, N)
    controls: np.ndarray  # (steps+1, M)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _as_control(u) -> np.ndarray:
    return np.atleast_1d(np.asarray(u, dtype=float))


def integrate_rk4(rhs: Rhs, control: ControlFn, x0, grid: TimeGrid) -> Trajectory:
    """Classical RK4 over ``grid``; ``control`` is sampled at every stage time."""
    x = np.array(x0, dtype=float, ndmin=1)
    h = grid.h
    times = grid.times
    states = np.empty((grid.steps + 1, x.size))
    states[0] = x
    u_prev = _as_control(control(times[0]))
    controls = np.empty((grid.steps + 1, u_prev.size))
    controls[0] = u_prev
    probe = np.asarray(rhs(times[0], x, u_prev))
    if probe.shape != x.shape:
        raise DimensionError(f"rhs returned shape {probe.shape}, state has shape {x.shape}")

    for k in range(grid.steps):
        t = times[k]
        u_mid = _as_control(control(t + 0.5 * h))
        u_next = _as_control(control(times[k + 1]))
        k1 = rhs(t, x, u_prev)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1, u_mid)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2, u_mid)
        k4 = rhs(t + h, x + h * k3, u_next)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite state", step=k + 1)
        states[k + 1] = x
        controls[k + 1] = u_next
        u_prev = u_next
    return Trajectory(grid, states, controls)


def prefix_energy(controls: np.ndarray, h: float) -> np.ndarray:
    """Cumulative trapezoid of ``||u(t)||^2`` on a uniform grid: ``E_t`` at every node."""
    sq = np.sum(np.asarray(controls, dtype=float).reshape(len(controls), -1) ** 2, axis=1)
    out = np.zeros_like(sq)
    out[1:] = np.cumsum(0.5 * h * (sq[:-1] + sq[1:]))
    return out


def grid_energy(controls: np.ndarray, h: float) -> float:
    sq = np.sum(np.asarray(controls, dtype=float).reshape(len(controls), -1) ** 2, axis=1)
    return float(h * (sq.sum() - 0.5 * (sq[0] + sq[-1])))


def control_energy(traj: Trajectory) -> float:
    """Trapezoid approximation of the control energy over the trajectory grid."""
    return grid_energy(traj.controls, traj.grid.h)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    n = traj.states.shape[1]
    m = traj.controls.shape[1]
    header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, x, u in zip(traj.times, traj.states, traj.controls):
            writer.writerow([fmt(t), *map(fmt, x), *map(fmt, u)])
    return path


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    n = sum(1 for c in header if c.startswith("x_"))
    t = body[:, 0]
    grid = TimeGrid(float(t[0]), float(t[-1]), len(t) - 1)
    return Trajectory(grid, body[:, 1:1 + n], body[:, 1 + n:])
