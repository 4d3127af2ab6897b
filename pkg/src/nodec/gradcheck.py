"""Finite-difference checks of the reverse-mode training gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kuramoto import KuramotoSystem, PhaseLoss, sample_system
from .linear_oc import two_node_problem
from .networks import make_graph
from .neuralnet import ControlNet, init_control_net, loss_and_grad, terminal_state
from .ode import TimeGrid
from .trainer import MSELoss

FD_STEP = 1e-5
RELATIVE_FLOOR = 1e-3
TASKS = ("linear", "kuramoto")


def finite_difference_grad(net: ControlNet, problem, grid: TimeGrid, loss, eps: float = FD_STEP) -> np.ndarray:
    """Central differences of the terminal loss, one weight at a time."""
    w = net.w
    out = np.empty(w.size)
    for k in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[k] += eps
        wm[k] -= eps
        lp = loss.value(terminal_state(net.with_weights(wp), problem, grid))
        lm = loss.value(terminal_state(net.with_weights(wm), problem, grid))
        out[k] = (lp - lm) / (2.0 * eps)
    return out


def relative_error(analytic, numeric, floor: float = RELATIVE_FLOOR) -> float:
    """Max over components of ``|a - n| / max(|a|, |n|, floor * max|n|)``.

    The floor keeps components that are tiny relative to the whole gradient
    from dominating through finite-difference round-off.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * np.max(np.abs(n)))
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(np.abs(a - n) / scale))


@dataclass(frozen=True)
class GradCheckRow:
    task: str
    seed: int
    n_params: int
    max_rel_error: float


def _probe_net(seed: int, output_dim: int = 1) -> ControlNet:
    # random (non-zero) output weights so every layer receives gradient
    net = init_control_net(output_dim, (8, 8), "elu", seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    w = net.w.copy()
    sl = net.output_layer_slice()
    w[sl] = rng.normal(0.0, 1.0, sl.stop - sl.start)
    return net.with_weights(w)


def check_case(task: str, seed: int, eps: float = FD_STEP) -> GradCheckRow:
    net = _probe_net(seed)
    if task == "linear":
        problem = two_node_problem()
        grid = TimeGrid(0.0, problem.horizon, 50)
        loss = MSELoss(problem.x_target)
    elif task == "kuramoto":
        g = make_graph("erdos_renyi", 8, seed, er_p=0.5)
        base, _ = sample_system(g, seed, horizon=1.0)
        # unit coupling so the control actually moves the phases
        problem = KuramotoSystem(g, base.omega, 1.0, base.theta0, 1.0)
        grid = TimeGrid(0.0, 1.0, 40)
        loss = PhaseLoss(g.adjacency)
    else:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    res = loss_and_grad(net, problem, grid, loss)
    fd = finite_difference_grad(net, problem, grid, loss, eps)
    return GradCheckRow(task, seed, net.w.size, relative_error(res.grad_w, fd))


def gradient_suite(seeds=range(1, 21), tasks=TASKS, eps: float = FD_STEP) -> list[GradCheckRow]:
    return [check_case(task, int(s), eps) for task in tasks for s in seeds]
