"""NODEC training loop and implicit-energy-regularization diagnostics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import stats

from .errors import DimensionError, DivergenceError
from .neuralnet import (ControlNet, ControlledSystem, TerminalLoss, control_jacobian, loss_and_grad,
                        net_controls, terminal_state)
from .ode import TimeGrid, fmt, grid_energy, prefix_energy

log = logging.getLogger(__name__)

OPTIMIZERS = ("plain_gd", "adam")
SNAPSHOT_EPOCHS = (500, 1000, 1500, 2000, 30000)


def mse_loss(x_T, x_target) -> float:
    x_T = np.asarray(x_T, dtype=float)
    x_target = np.asarray(x_target, dtype=float)
    if x_T.shape != x_target.shape:
        raise DimensionError(f"length mismatch {x_T.shape} vs {x_target.shape}")
    d = x_T - x_target
    return float(d @ d) / d.size


@dataclass(frozen=True, eq=False)
class MSELoss:
    x_target: np.ndarray

    def value(self, x_T):
        return mse_loss(x_T, self.x_target)

    def value_and_grad(self, x_T):
        d = np.asarray(x_T) - self.x_target
        return float(d @ d) / d.size, 2.0 * d / d.size


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 30000
    optimizer: str = "plain_gd"
    seed: int = 0
    energy_window: tuple[float, float] | None = (5.0, 7.0)
    log_every: int = 1
    snapshot_epochs: tuple[int, ...] = SNAPSHOT_EPOCHS
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass(eq=False)
class TrainLog:
    """Per-epoch diagnostics.

    Row ``n`` describes the weights ``w^(n)`` before the n-th update; the
    difference columns compare them with ``w^(n+1)``.
    """

    grid: TimeGrid
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    E_T: list[float] = field(default_factory=list)
    w_norm2: list[float] = field(default_factory=list)
    dw_norm2: list[float] = field(default_factory=list)
    du_norm2: list[float] = field(default_factory=list)
    prefix_energies: list[np.ndarray] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    snapshot_weights: dict[int, np.ndarray] = field(default_factory=dict)
    final_loss: float = float("nan")
    final_state: np.ndarray | None = None
    diverged: bool = False

    def __len__(self):
        return len(self.epoch)


class _Adam:
    def __init__(self, size, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


def gd_step(w: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    """One literal weight update ``w - eta * grad``."""
    return w - learning_rate * grad


def train(net: ControlNet, problem: ControlledSystem, grid: TimeGrid, cfg: TrainConfig,
          loss: TerminalLoss) -> tuple[ControlNet, TrainLog]:
    """Gradient descent on the terminal loss. Divergence returns a flagged partial log."""
    trainlog = TrainLog(grid)
    h = grid.h
    node_times = grid.times - grid.t_start
    w = net.w.copy()
    adam = _Adam(w.size, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps) if cfg.optimizer == "adam" else None
    snap = set(cfg.snapshot_epochs)
    u_cur = None

    for n in range(cfg.epochs):
        cur = net.with_weights(w)
        try:
            res = loss_and_grad(cur, problem, grid, loss)
        except DivergenceError as exc:
            log.warning("training diverged at epoch %d: %s", n, exc)
            trainlog.diverged = True
            return cur, trainlog
        u_cur = res.controls
        if n in snap:
            trainlog.snapshots[n] = u_cur.copy()
            trainlog.snapshot_weights[n] = w.copy()
        step = adam.step(res.grad_w) if adam else -cfg.learning_rate * res.grad_w
        w_next = w + step
        if not np.all(np.isfinite(w_next)):
            trainlog.diverged = True
            return cur, trainlog
        if n % cfg.log_every == 0:
            u_next = net_controls(net.with_weights(w_next), node_times, grid.horizon)
            pe = prefix_energy(u_cur, h)
            trainlog.epoch.append(n)
            trainlog.loss.append(res.loss)
            trainlog.E_T.append(float(pe[-1]))
            trainlog.w_norm2.append(float(w @ w))
            trainlog.dw_norm2.append(float(step @ step))
            trainlog.du_norm2.append(grid_energy(u_next - u_cur, h))
            trainlog.prefix_energies.append(pe)
        w = w_next

    final = net.with_weights(w)
    try:
        x_T = terminal_state(final, problem, grid)
        trainlog.final_state = x_T
        trainlog.final_loss = loss.value(x_T)
    except DivergenceError:
        trainlog.diverged = True
    if cfg.epochs in snap:
        trainlog.snapshots[cfg.epochs] = net_controls(final, node_times, grid.horizon)
        trainlog.snapshot_weights[cfg.epochs] = w.copy()
    return final, trainlog


def delta_correlations(trainlog: TrainLog, window: int = 1000) -> list[tuple[int, float, float]]:
    """Pearson r (and two-sided p) between ``||dw||^2`` and ``||du||^2`` per window.

    Windows are consecutive and non-overlapping; a trailing partial window is
    dropped. A window yields ``nan`` for both values when either series has
    zero variance or when the median weight update is below float64
    resolution of the weights (``||dw|| < 4 eps ||w||``), where the series are
    rounding noise.
    """
    if window < 3:
        raise ValueError("window must be >= 3")
    dw = np.asarray(trainlog.dw_norm2)
    du = np.asarray(trainlog.du_norm2)
    floor = (4.0 * np.finfo(float).eps) ** 2 * np.asarray(trainlog.w_norm2)
    out = []
    for i in range(len(dw) // window):
        sl = slice(i * window, (i + 1) * window)
        a, b = dw[sl], du[sl]
        if np.ptp(a) == 0.0 or np.ptp(b) == 0.0 or np.median(a) < np.median(floor[sl]):
            out.append((i, float("nan"), float("nan")))
            continue
        r, p = stats.pearsonr(a, b)
        out.append((i, float(r), float(p)))
    return out


def taylor_check(net: ControlNet, dw, grid: TimeGrid) -> float:
    """Largest first-order expansion residual of the control over the grid nodes."""
    dw = np.asarray(dw, dtype=float)
    times = grid.times - grid.t_start
    u0 = net_controls(net, times, grid.horizon)
    u1 = net_controls(net.with_weights(net.w + dw), times, grid.horizon)
    jac = control_jacobian(net, times, grid.horizon)
    resid = u1 - u0 - jac @ dw
    return float(np.max(np.linalg.norm(resid, axis=1)))


def write_trainlog_csv(trainlog: TrainLog, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "loss", "E_T", "w_norm2", "dw_norm2", "du_norm2"])
        for row in zip(trainlog.epoch, trainlog.loss, trainlog.E_T, trainlog.w_norm2,
                       trainlog.dw_norm2, trainlog.du_norm2):
            wr.writerow([row[0], *map(fmt, row[1:])])
    return path


def write_snapshots_csv(trainlog: TrainLog, path) -> Path:
    path = Path(path)
    times = trainlog.grid.times
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        m = next(iter(trainlog.snapshots.values())).shape[1] if trainlog.snapshots else 1
        wr.writerow(["epoch", "t", *[f"u_{j + 1}" for j in range(m)]])
        for ep in sorted(trainlog.snapshots):
            for t, u in zip(times, trainlog.snapshots[ep]):
                wr.writerow([ep, fmt(t), *map(fmt, u)])
    return path


def write_correlations_csv(rows: Iterable[tuple[int, float, float]], window: int, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["window", "epoch_start", "pearson_r", "p_value"])
        for i, r, p in rows:
            wr.writerow([i, i * window, fmt(r), fmt(p)])
    return path
