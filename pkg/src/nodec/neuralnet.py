"""Feed-forward control network and exact gradients through unrolled RK4.

The network maps normalized time ``s = t / T`` to a control vector. Since the
control is open loop, every RK4 stage time can be evaluated in one batched
forward pass; the ODE is then integrated, reverse-mode swept stage by stage,
and the stage-control adjoints are pushed back through the same batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import CalibrationError, DimensionError, DivergenceError
from .ode import TimeGrid, grid_energy

ACTIVATIONS = ("tanh", "elu", "linear")
DEFAULT_HIDDEN = (32, 32)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "elu":
        return np.where(z > 0, 1.0, a + 1.0)
    return np.ones_like(z)


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum((n_in + 1) * n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(frozen=True, eq=False)
class ControlNet:
    """Flat-parameter MLP. Hidden layers use ``activations``; the output is linear.

    Each layer stores its weight matrix ``(n_in, n_out)`` row-major followed by
    its bias vector in ``w``.
    """

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    w: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", tuple(self.activations))
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if len(sizes) < 2 or sizes[0] != 1:
            raise DimensionError("layer_sizes must start with input width 1 and have an output layer")
        if len(self.activations) != len(sizes) - 2:
            raise DimensionError("need one activation per hidden layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if w.shape != (param_count(sizes),):
            raise DimensionError(f"w has {w.size} entries, expected {param_count(sizes)}")

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def with_weights(self, w) -> "ControlNet":
        return replace(self, w=np.asarray(w, dtype=float))

    def layers(self, w: np.ndarray | None = None):
        """Yield ``(W, b)`` views into the flat vector."""
        w = self.w if w is None else w
        off = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = w[off:off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            b = w[off:off + n_out]
            off += n_out
            yield W, b

    def output_layer_slice(self) -> slice:
        n_in, n_out = self.layer_sizes[-2], self.layer_sizes[-1]
        size = (n_in + 1) * n_out
        total = self.w.size
        return slice(total - size, total)


def init_control_net(output_dim: int = 1, hidden: Sequence[int] = DEFAULT_HIDDEN,
                     activation: str = "elu", seed: int = 0, output_bias: float | None = None) -> ControlNet:
    """Seeded init: uniform in +-sqrt(6/(n_in+n_out)) for hidden layers and all biases.

    Output-layer weights start at zero so the initial control is the (constant)
    output bias; ``output_bias`` overrides the sampled bias when given. Hidden
    weights still receive gradient once the output weights move.
    """
    sizes = (1, *hidden, output_dim)
    rng = np.random.default_rng(seed)
    parts = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        parts.append(rng.uniform(-lim, lim, size=(n_in + 1) * n_out))
    net = ControlNet(sizes, (activation,) * len(hidden), np.concatenate(parts))
    w = net.w.copy()
    out = net.output_layer_slice()
    w[out.start:out.stop - output_dim] = 0.0
    if output_bias is not None:
        w[out.stop - output_dim:out.stop] = output_bias
    return net.with_weights(w)


def forward_batch(net: ControlNet, s, w: np.ndarray | None = None):
    """Evaluate the net at normalized times ``s``; returns ``(outputs (B, M), cache)``."""
    h = np.asarray(s, dtype=float).reshape(-1, 1)
    cache = [h]
    layers = list(net.layers(w))
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        if i < len(layers) - 1:
            a = _act(net.activations[i], z)
            cache.append((z, a))
            h = a
        else:
            h = z
    return h, cache


def backward_batch(net: ControlNet, cache, g_out: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Gradient of ``sum(g_out * outputs)`` with respect to the flat weights."""
    layers = list(net.layers(w))
    grads = []
    g = np.asarray(g_out, dtype=float).reshape(-1, net.output_dim)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = cache[0] if i == 0 else cache[i][1]
        grads.append(np.concatenate([(h_in.T @ g).ravel(), g.sum(axis=0)]))
        if i > 0:
            z, a = cache[i]
            g = (g @ W.T) * _act_grad(net.activations[i - 1], z, a)
    return np.concatenate(grads[::-1])


def net_forward(net: ControlNet, t: float, horizon: float) -> np.ndarray:
    """Control vector at time ``t`` (input is ``t / horizon``)."""
    out, _ = forward_batch(net, [t / horizon])
    return out[0]


def net_controls(net: ControlNet, times, horizon: float) -> np.ndarray:
    out, _ = forward_batch(net, np.asarray(times, dtype=float) / horizon)
    return out


def control_jacobian(net: ControlNet, times, horizon: float) -> np.ndarray:
    """Jacobian of the outputs w.r.t. ``w`` at each time, shape ``(B, M, P)``.

    Built row by row with reverse sweeps, one per (time, output) pair.
    """
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, net.output_dim, net.w.size))
    for b, t in enumerate(times):
        _, cache = forward_batch(net, [t / horizon])
        for m in range(net.output_dim):
            e = np.zeros((1, net.output_dim))
            e[0, m] = 1.0
            out[b, m] = backward_batch(net, cache, e)
    return out


class ControlledSystem(Protocol):
    """What :func:`loss_and_grad` needs from a dynamical system."""

    x0: np.ndarray

    def rhs(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def rhs_vjp(self, t: float, x: np.ndarray, u: np.ndarray,
                g: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class TerminalLoss(Protocol):
    def value(self, x_T: np.ndarray) -> float: ...

    def value_and_grad(self, x_T: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True, eq=False)
class GradientResult:
    loss: float
    grad_w: np.ndarray
    terminal_state: np.ndarray
    controls: np.ndarray  # net outputs at grid nodes, (steps+1, M)


def stage_controls(net: ControlNet, grid: TimeGrid, w: np.ndarray | None = None):
    out, cache = forward_batch(net, (grid.stage_times() - grid.t_start) / grid.horizon, w)
    return out, cache


def terminal_state(net: ControlNet, problem: ControlledSystem, grid: TimeGrid,
                   w: np.ndarray | None = None) -> np.ndarray:
    """Forward pass only; same arithmetic as :func:`loss_and_grad`."""
    u, _ = stage_controls(net, grid, w)
    fast = getattr(problem, "rk4_terminal_map", None)
    if fast is not None:
        return fast(grid, u)[0]
    return _rk4_forward(problem, grid, u, keep=False)[0]


def _rk4_forward(problem, grid: TimeGrid, u: np.ndarray, keep: bool):
    rhs = problem.rhs
    h = grid.h
    x = np.array(problem.x0, dtype=float)
    t0 = grid.t_start
    tape = [] if keep else None
    for k in range(grid.steps):
        t = t0 + k * h
        u0, um, u1 = u[2 * k], u[2 * k + 1], u[2 * k + 2]
        k1 = rhs(t, x, u0)
        x2 = x + 0.5 * h * k1
        k2 = rhs(t + 0.5 * h, x2, um)
        x3 = x + 0.5 * h * k2
        k3 = rhs(t + 0.5 * h, x3, um)
        x4 = x + h * k3
        k4 = rhs(t + h, x4, u1)
        if keep:
            tape.append((x, x2, x3, x4))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite state in forward pass", step=k + 1)
    return x, tape


def _rk4_backward(problem, grid: TimeGrid, u: np.ndarray, tape, g_final: np.ndarray) -> np.ndarray:
    """Reverse sweep of the unrolled RK4; returns d(loss)/d(stage controls)."""
    vjp = problem.rhs_vjp
    h = grid.h
    t0 = grid.t_start
    gu = np.zeros_like(u)
    g = g_final
    for k in range(grid.steps - 1, -1, -1):
        t = t0 + k * h
        x1, x2, x3, x4 = tape[k]
        u0, um, u1 = u[2 * k], u[2 * k + 1], u[2 * k + 2]
        gx4, gu4 = vjp(t + h, x4, u1, (h / 6.0) * g)
        gx3, gu3 = vjp(t + 0.5 * h, x3, um, (h / 3.0) * g + h * gx4)
        gx2, gu2 = vjp(t + 0.5 * h, x2, um, (h / 3.0) * g + 0.5 * h * gx3)
        gx1, gu1 = vjp(t, x1, u0, (h / 6.0) * g + 0.5 * h * gx2)
        gu[2 * k + 2] += gu4
        gu[2 * k + 1] += gu3 + gu2
        gu[2 * k] += gu1
        g = g + gx1 + gx2 + gx3 + gx4
    return gu


def loss_and_grad(net: ControlNet, problem: ControlledSystem, grid: TimeGrid,
                  loss: TerminalLoss) -> GradientResult:
    """Terminal loss and its exact gradient w.r.t. the network weights."""
    u, cache = stage_controls(net, grid)
    fast = getattr(problem, "rk4_terminal_map", None)
    if fast is not None:
        x_T, g_stage_fn = fast(grid, u)
        value, g_x = loss.value_and_grad(x_T)
        g_stage = g_stage_fn(g_x)
    else:
        x_T, tape = _rk4_forward(problem, grid, u, keep=True)
        value, g_x = loss.value_and_grad(x_T)
        g_stage = _rk4_backward(problem, grid, u, tape, g_x)
    if not np.isfinite(value):
        raise DivergenceError("non-finite loss")
    grad = backward_batch(net, cache, g_stage)
    return GradientResult(float(value), grad, x_T, u[::2].copy())


def scale_output_layer(net: ControlNet, scale: float) -> ControlNet:
    w = net.w.copy()
    w[net.output_layer_slice()] *= scale
    return net.with_weights(w)


def net_energy(net: ControlNet, grid: TimeGrid) -> float:
    u = net_controls(net, grid.times - grid.t_start, grid.horizon)
    return grid_energy(u, grid.h)


def calibrate_initial_energy(net: ControlNet, grid: TimeGrid,
                             energy_window: tuple[float, float]) -> ControlNet:
    """Rescale the output layer so the initial control energy lies in the window.

    A net already inside the window is returned unchanged; otherwise the scale
    is bisected towards the window midpoint.
    """
    lo, hi = map(float, energy_window)
    if not (lo > 0 and hi > lo):
        raise ValueError("energy window must satisfy 0 < E_lo < E_hi")
    e0 = net_energy(net, grid)
    if lo <= e0 <= hi:
        return net
    if e0 == 0.0:
        raise CalibrationError("network output is identically zero; cannot rescale")
    target = 0.5 * (lo + hi)

    def energy(s: float) -> float:
        return net_energy(scale_output_layer(net, s), grid)

    a, b = 0.0, 1.0
    while energy(b) < target:
        b *= 2.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        e = energy(mid)
        if abs(e - target) <= 1e-12 * target:
            break
        if e < target:
            a = mid
        else:
            b = mid
    s = 0.5 * (a + b)
    out = scale_output_layer(net, s)
    if not lo <= net_energy(out, grid) <= hi:
        raise CalibrationError("bisection failed to reach the energy window")
    return out


def save_checkpoint(net: ControlNet, path) -> Path:
    path = Path(path)
    payload = {
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "w": [float(x) for x in net.w],
    }
    path.write_text(json.dumps(payload, indent=1) + "\n")
    return path


def load_checkpoint(path) -> ControlNet:
    payload = json.loads(Path(path).read_text())
    return ControlNet(tuple(payload["layer_sizes"]), tuple(payload["activations"]),
                      np.array(payload["w"], dtype=float))
