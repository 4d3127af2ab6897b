"""Adjoint-gradient method (AGM) for a global Kuramoto coupling control.

Each iteration solves the phases forward, the adjoint backward from its
terminal condition, and updates the control pointwise on the grid:

    u <- u - eta * [beta u + (K/N) sum_i lambda_i sum_j A_ij sin(theta_j - theta_i)]

The adjoint dynamics and terminal value are taken as stated for this
baseline, without re-derivation. Its terminal value is half the gradient
of the phase loss, so the update direction is half the true gradient
density; only the step size absorbs that factor. The control is piecewise
linear between grid nodes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError
from .kuramoto import KuramotoSystem, coupling_sums, kuramoto_loss, order_parameter
from .ode import TimeGrid, Trajectory, fmt, grid_energy, integrate_rk4

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgmConfig:
    grid: TimeGrid
    beta: float = 1e-3
    learning_rate: float = 0.1
    iterations: int = 100
    seed: int = 0
    max_halvings: int = 30

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    grid: TimeGrid
    lambdas: np.ndarray  # (steps+1, N)


@dataclass(eq=False)
class AgmHistory:
    iteration: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    E_T: list[float] = field(default_factory=list)
    r_T: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    diverged: bool = False


def adjoint_terminal(sys: KuramotoSystem, theta_T) -> np.ndarray:
    """``lambda_i(T) = 1/2 sum_j A_ij sin(2 theta_i - 2 theta_j)``."""
    theta_T = np.asarray(theta_T, dtype=float)
    d = 2.0 * (theta_T[:, None] - theta_T[None, :])
    return 0.5 * np.sum(sys.graph.adjacency * np.sin(d), axis=1)


def adjoint_rhs(sys: KuramotoSystem, theta: np.ndarray, u: float, lam: np.ndarray) -> np.ndarray:
    """Time derivative of the adjoint at one instant (not its negative)."""
    A = sys.graph.adjacency
    s, c = np.sin(theta), np.cos(theta)
    cos_sums = c * (A @ c) + s * (A @ s)  # sum_j A_ij cos(theta_j - theta_i)
    weighted = c * (A @ (lam * c)) + s * (A @ (lam * s))  # sum_j A_ij lam_j cos(...)
    k = sys.coupling * u / sys.n
    return k * (lam * cos_sums - weighted)


def _node_scalar(u_nodes) -> np.ndarray:
    return np.asarray(u_nodes, dtype=float).reshape(-1)


def _interp(u_nodes: np.ndarray, grid: TimeGrid):
    times = grid.times

    def control(t):
        return np.array([np.interp(t, times, u_nodes)])

    return control


def forward_phases(sys: KuramotoSystem, u_nodes, grid: TimeGrid) -> Trajectory:
    """Phase trajectory under a piecewise-linear global control."""
    return integrate_rk4(sys.rhs, _interp(_node_scalar(u_nodes), grid), sys.theta0, grid)


def integrate_adjoint(sys: KuramotoSystem, theta_traj: Trajectory, u_nodes, grid: TimeGrid,
                      lam_T: np.ndarray | None = None) -> AdjointTrajectory:
    """Backward RK4 from the terminal adjoint; midpoint phases and controls are linear averages."""
    u = _node_scalar(u_nodes)
    th = theta_traj.states
    lam = adjoint_terminal(sys, th[-1]) if lam_T is None else np.asarray(lam_T, dtype=float)
    out = np.empty_like(th)
    out[-1] = lam
    h = grid.h
    for k in range(grid.steps, 0, -1):
        th_mid = 0.5 * (th[k] + th[k - 1])
        u_mid = 0.5 * (u[k] + u[k - 1])
        k1 = adjoint_rhs(sys, th[k], u[k], lam)
        k2 = adjoint_rhs(sys, th_mid, u_mid, lam - 0.5 * h * k1)
        k3 = adjoint_rhs(sys, th_mid, u_mid, lam - 0.5 * h * k2)
        k4 = adjoint_rhs(sys, th[k - 1], u[k - 1], lam - h * k3)
        lam = lam - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(lam)):
            raise DivergenceError("non-finite adjoint", step=k - 1)
        out[k - 1] = lam
    return AdjointTrajectory(grid, out)


def integrate_adjoint_forward(sys: KuramotoSystem, theta_traj: Trajectory, u_nodes, grid: TimeGrid,
                              lam_0: np.ndarray) -> np.ndarray:
    """Forward RK4 of the adjoint ODE from ``lambda(0)``; returns ``lambda(T)``."""
    u = _node_scalar(u_nodes)
    th = theta_traj.states
    lam = np.asarray(lam_0, dtype=float)
    h = grid.h
    for k in range(grid.steps):
        th_mid = 0.5 * (th[k] + th[k + 1])
        u_mid = 0.5 * (u[k] + u[k + 1])
        k1 = adjoint_rhs(sys, th[k], u[k], lam)
        k2 = adjoint_rhs(sys, th_mid, u_mid, lam + 0.5 * h * k1)
        k3 = adjoint_rhs(sys, th_mid, u_mid, lam + 0.5 * h * k2)
        k4 = adjoint_rhs(sys, th[k + 1], u[k + 1], lam + h * k3)
        lam = lam + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return lam


def agm_gradient(sys: KuramotoSystem, theta_traj: Trajectory, adj: AdjointTrajectory,
                 u_nodes, beta: float) -> np.ndarray:
    """Pointwise update direction ``beta u + (K/N) sum_i lambda_i sum_j A_ij sin(theta_j - theta_i)``."""
    u = _node_scalar(u_nodes)
    A = sys.graph.adjacency
    coupling = np.array([lam @ coupling_sums(A, th) for lam, th in zip(adj.lambdas, theta_traj.states)])
    return beta * u + (sys.coupling / sys.n) * coupling


def _evaluate(sys, u, grid, beta):
    traj = forward_phases(sys, u, grid)
    loss = kuramoto_loss(sys, traj.final_state, beta, u, grid.h)
    return traj, loss


def agm_optimize(sys: KuramotoSystem, u0, cfg: AgmConfig) -> tuple[np.ndarray, AgmHistory]:
    """Iterate forward solve, adjoint solve, and pointwise control update.

    A step that raises the loss is retried with half the learning rate; the
    reduced rate is kept for later iterations.
    """
    if sys.control_mode != "global_scalar":
        raise ValueError("AGM is defined for a global scalar control")
    grid = cfg.grid
    u = _node_scalar(u0).copy()
    if u.size != grid.steps + 1:
        raise ValueError("u0 must be sampled on the grid nodes")
    hist = AgmHistory()
    eta = cfg.learning_rate

    def record(i, traj, loss):
        hist.iteration.append(i)
        hist.loss.append(float(loss))
        hist.E_T.append(grid_energy(u, grid.h))
        hist.r_T.append(order_parameter(traj.final_state))
        hist.learning_rate.append(eta)

    try:
        traj, loss = _evaluate(sys, u, grid, cfg.beta)
    except DivergenceError:
        hist.diverged = True
        return u, hist
    record(0, traj, loss)
    for it in range(1, cfg.iterations + 1):
        adj = integrate_adjoint(sys, traj, u, grid)
        grad = agm_gradient(sys, traj, adj, u, cfg.beta)
        for _ in range(cfg.max_halvings + 1):
            cand = u - eta * grad
            try:
                cand_traj, cand_loss = _evaluate(sys, cand, grid, cfg.beta)
                ok = np.isfinite(cand_loss) and cand_loss <= loss
            except DivergenceError:
                ok = False
            if ok:
                break
            eta *= 0.5
        else:
            log.info("AGM step search exhausted at iteration %d; stopping", it)
            break
        u, traj, loss = cand, cand_traj, cand_loss
        record(it, traj, loss)
    return u, hist


def write_history_csv(hist: AgmHistory, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "loss", "E_T", "r_T"])
        for row in zip(hist.iteration, hist.loss, hist.E_T, hist.r_T):
            wr.writerow([row[0], *map(fmt, row[1:])])
    return path


def write_control_csv(grid: TimeGrid, u_nodes, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "u"])
        for t, u in zip(grid.times, _node_scalar(u_nodes)):
            wr.writerow([fmt(t), fmt(u)])
    return path
