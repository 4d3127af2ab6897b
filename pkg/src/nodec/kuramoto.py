"""Kuramoto oscillators with multiplicative coupling control.

``theta_i' = omega_i + (K u_i / N) sum_j A_ij sin(theta_j - theta_i)``

Phases are kept unwrapped. The coupling sums use
``sum_j A_ij sin(theta_j - theta_i) = cos(theta_i) (A sin theta)_i - sin(theta_i) (A cos theta)_i``,
which needs two mat-vecs instead of an N x N table of sines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConnectivityError, DimensionError
from .networks import Graph, is_connected, laplacian
from .numkit import pinv_sym
from .ode import TimeGrid, fmt, grid_energy

CONTROL_MODES = ("global_scalar", "per_node", "constant_one")
PHASE_STD = 0.2


def coupling_sums(adjacency: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``sum_j A_ij sin(theta_j - theta_i)`` for every i."""
    s, c = np.sin(theta), np.cos(theta)
    return c * (adjacency @ s) - s * (adjacency @ c)


@dataclass(frozen=True, eq=False)
class KuramotoSystem:
    graph: Graph
    omega: np.ndarray
    coupling: float
    theta0: np.ndarray
    horizon: float
    control_mode: str = "global_scalar"

    def __post_init__(self):
        n = self.graph.n
        omega = np.array(self.omega, dtype=float).ravel()
        theta0 = np.array(self.theta0, dtype=float).ravel()
        if omega.size != n or theta0.size != n:
            raise DimensionError("omega and theta0 must have one entry per node")
        if not self.coupling > 0:
            raise ValueError("coupling K must be positive")
        if self.control_mode not in CONTROL_MODES:
            raise ValueError(f"control_mode must be one of {CONTROL_MODES}")
        omega.setflags(write=False)
        theta0.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "theta0", theta0)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def x0(self) -> np.ndarray:
        return self.theta0

    @property
    def control_dim(self) -> int:
        return self.n if self.control_mode == "per_node" else 1

    def _gain(self, u) -> np.ndarray | float:
        if self.control_mode == "constant_one":
            return 1.0
        u = np.asarray(u, dtype=float)
        if self.control_mode == "global_scalar":
            return float(u.reshape(-1)[0])
        return u

    def rhs(self, t, theta, u):
        return self.omega + (self.coupling / self.n) * self._gain(u) * coupling_sums(self.graph.adjacency, theta)

    def rhs_vjp(self, t, theta, u, g):
        A = self.graph.adjacency
        s, c = np.sin(theta), np.cos(theta)
        As, Ac = A @ s, A @ c
        sums = c * As - s * Ac
        scale = self.coupling / self.n
        a = g * (scale * self._gain(u))
        g_theta = -a * (s * As + c * Ac) + c * (A @ (a * c)) + s * (A @ (a * s))
        if self.control_mode == "constant_one":
            g_u = np.zeros(np.size(u))
        elif self.control_mode == "global_scalar":
            g_u = np.array([scale * float(g @ sums)])
        else:
            g_u = scale * g * sums
        return g_theta, g_u


def kuramoto_rhs(sys: KuramotoSystem, theta, u) -> np.ndarray:
    return sys.rhs(0.0, np.asarray(theta, dtype=float), np.atleast_1d(u))


def order_parameter(theta) -> float:
    """``r = N^-1 sqrt(sum_ij cos(theta_j - theta_i))``, evaluated as ``|mean exp(i theta)|``."""
    theta = np.asarray(theta, dtype=float)
    total = np.sum(np.cos(theta)) ** 2 + np.sum(np.sin(theta)) ** 2
    return float(np.sqrt(max(total, 0.0)) / theta.size)


def edge_spread(g: Graph, x) -> float:
    """``max over edges |x_i - x_j|``."""
    e = g.edge_array
    if e.size == 0:
        return 0.0
    x = np.asarray(x, dtype=float)
    return float(np.max(np.abs(x[e[:, 0]] - x[e[:, 1]])))


def critical_coupling(g: Graph, omega) -> float:
    if not is_connected(g):
        raise ConnectivityError("critical coupling needs a connected graph")
    return edge_spread(g, pinv_sym(laplacian(g)) @ np.asarray(omega, dtype=float))


def sync_residual(sys: KuramotoSystem, theta_T, u_T) -> float:
    """Largest frequency mismatch across edges at the final state."""
    return edge_spread(sys.graph, kuramoto_rhs(sys, theta_T, u_T))


def phase_loss(adjacency: np.ndarray, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    d = theta[None, :] - theta[:, None]
    return 0.5 * float(np.sum(adjacency * np.sin(d) ** 2))


def phase_loss_grad(adjacency: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    d = theta[:, None] - theta[None, :]
    return np.sum(adjacency * np.sin(2.0 * d), axis=1)


def kuramoto_loss(sys: KuramotoSystem, theta_T, beta: float, controls=None, h: float | None = None) -> float:
    """Terminal phase loss plus ``beta/2`` times the control energy of ``controls`` sampled with step ``h``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    value = phase_loss(sys.graph.adjacency, theta_T)
    if beta and controls is not None:
        value += 0.5 * beta * grid_energy(np.asarray(controls), h)
    return value


@dataclass(frozen=True, eq=False)
class PhaseLoss:
    """Terminal loss for NODEC training (no energy term)."""

    adjacency: np.ndarray

    def value(self, theta_T):
        return phase_loss(self.adjacency, theta_T)

    def value_and_grad(self, theta_T):
        return phase_loss(self.adjacency, theta_T), phase_loss_grad(self.adjacency, theta_T)


def sample_system(graph: Graph, seed: int, horizon: float = 3.0, coupling_factor: float = 0.1,
                  control_mode: str = "global_scalar") -> tuple[KuramotoSystem, float]:
    """Draw frequencies and initial phases from N(0, 0.2^2) and set ``K = factor * K*``.

    Frequencies and phases come from separate child streams of ``seed``.
    Returns the system and ``K*``.
    """
    omega_seq, theta_seq = np.random.SeedSequence(seed).spawn(2)
    omega = np.random.default_rng(omega_seq).normal(0.0, PHASE_STD, graph.n)
    theta0 = np.random.default_rng(theta_seq).normal(0.0, PHASE_STD, graph.n)
    k_star = critical_coupling(graph, omega)
    return KuramotoSystem(graph, omega, coupling_factor * k_star, theta0, horizon, control_mode), k_star


def write_phase_csv(grid: TimeGrid, thetas: np.ndarray, controls: np.ndarray, path) -> Path:
    """Columns ``t, theta_1..theta_N, r, u`` (``u`` is the first control component)."""
    path = Path(path)
    n = thetas.shape[1]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", *[f"theta_{i + 1}" for i in range(n)], "r", "u"])
        for t, th, u in zip(grid.times, thetas, np.asarray(controls).reshape(len(thetas), -1)):
            wr.writerow([fmt(t), *map(fmt, th), fmt(order_parameter(th)), fmt(u[0])])
    return path
