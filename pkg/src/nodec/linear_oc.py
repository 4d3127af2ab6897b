"""Minimum-energy optimal control for linear time-invariant systems.

For ``x' = A x + B u`` steered from ``x0`` to ``x_target`` over ``[0, T]`` the
energy-optimal input is ``u*(t) = B^T exp(A^T (T - t)) W(T)^{-1} v(T)`` with
``v(T) = x_target - exp(A T) x0`` and ``W`` the controllability Gramian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .numkit import as_matrix, integrate_matrix, lu_solve, mat_exp
from .ode import TimeGrid, Trajectory, integrate_rk4

GRAMIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LinearControlProblem:
    A: np.ndarray
    B: np.ndarray
    x0: np.ndarray
    x_target: np.ndarray
    horizon: float
    _maps: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        x0 = np.array(self.x0, dtype=float).ravel()
        xt = np.array(self.x_target, dtype=float).ravel()
        if A.shape[0] != A.shape[1]:
            raise DimensionError("A must be square")
        if B.shape[0] != A.shape[0] or x0.size != A.shape[0] or xt.size != A.shape[0]:
            raise DimensionError("inconsistent dimensions among A, B, x0, x_target")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        for name, val in (("A", A), ("B", B), ("x0", x0), ("x_target", xt)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def rhs(self, t, x, u):
        return self.A @ x + self.B @ u

    def rhs_vjp(self, t, x, u, g):
        return self.A.T @ g, self.B.T @ g

    def rk4_terminal_map(self, grid: TimeGrid, u_stages: np.ndarray):
        """Terminal state of the RK4 recursion as an affine map of the stage controls.

        RK4 on a linear system is ``x_{k+1} = P x_k + Q0 u_k + Qm u_{k+1/2} + Q1 u_{k+1}``;
        the unrolled recursion is precomputed once per grid. Returns the
        terminal state and a function mapping ``dL/dx_T`` to ``dL/du_stages``.
        """
        key = (grid.t_start, grid.t_end, grid.steps)
        if key not in self._maps:
            self._maps[key] = self._build_map(grid)
        free, G = self._maps[key]
        shape = u_stages.shape
        x_T = free + G @ u_stages.ravel()
        return x_T, lambda g: (G.T @ g).reshape(shape)

    def _build_map(self, grid: TimeGrid):
        A, B, h = self.A, self.B, grid.h
        n, m = self.state_dim, self.control_dim
        eye = np.eye(n)
        hA = h * A
        P = eye + hA @ (eye + hA / 2.0 @ (eye + hA / 3.0 @ (eye + hA / 4.0)))
        # stage derivatives as linear maps of the three control samples
        k1_u0 = B
        k2_u0, k2_um = A @ (0.5 * h * k1_u0), B
        k3_u0, k3_um = A @ (0.5 * h * k2_u0), B + A @ (0.5 * h * k2_um)
        k4_u0, k4_um, k4_u1 = A @ (h * k3_u0), A @ (h * k3_um), B
        c = h / 6.0
        Q0 = c * (k1_u0 + 2 * k2_u0 + 2 * k3_u0 + k4_u0)
        Qm = c * (2 * k2_um + 2 * k3_um + k4_um)
        Q1 = c * k4_u1
        steps = grid.steps
        G = np.zeros((n, (2 * steps + 1) * m))
        prop = eye.copy()  # P^(steps-1-k), filled from the last step backwards
        for k in range(steps - 1, -1, -1):
            for j, Q in ((2 * k, Q0), (2 * k + 1, Qm), (2 * k + 2, Q1)):
                G[:, j * m:(j + 1) * m] += prop @ Q
            prop = prop @ P
        free = prop @ self.x0
        return free, G


def two_node_problem(x0=(1.0, 0.5), x_target=(0.0, 0.0), horizon: float = 1.0) -> LinearControlProblem:
    """The driven two-node chain ``A = [[1,0],[1,0]]``, ``B = [1,0]^T``."""
    return LinearControlProblem(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[1.0], [0.0]]),
                                np.asarray(x0, float), np.asarray(x_target, float), horizon)


def gramian(p: LinearControlProblem, tol: float = GRAMIAN_TOL) -> np.ndarray:
    BBt = p.B @ p.B.T

    def integrand(t):
        E = mat_exp(p.A, t)
        return E @ BBt @ E.T

    W = integrate_matrix(integrand, 0.0, p.horizon, tol)
    return 0.5 * (W + W.T)


def free_evolution_gap(p: LinearControlProblem) -> np.ndarray:
    """``v(T) = x_target - exp(A T) x0``."""
    return p.x_target - mat_exp(p.A, p.horizon) @ p.x0


def _costate(p: LinearControlProblem) -> np.ndarray:
    # W^{-1} v, cached on the problem
    if "costate" not in p._maps:
        p._maps["costate"] = lu_solve(gramian(p), free_evolution_gap(p))
    return p._maps["costate"]


def optimal_control(p: LinearControlProblem, t: float) -> np.ndarray:
    if not -1e-12 <= t <= p.horizon + 1e-12:
        raise ValueError(f"t={t} outside [0, {p.horizon}]")
    return p.B.T @ mat_exp(p.A.T, p.horizon - t) @ _costate(p)


def oc_energy(p: LinearControlProblem) -> float:
    v = free_evolution_gap(p)
    return float(v @ _costate(p))


def oc_trajectory(p: LinearControlProblem, grid: TimeGrid) -> Trajectory:
    """Integrate the system under ``u*`` with RK4 on ``grid``."""
    return integrate_rk4(p.rhs, lambda t: optimal_control(p, min(max(t, 0.0), p.horizon)), p.x0, grid)
