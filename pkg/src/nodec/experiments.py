"""Experiment runners: configuration, seeding, and data-file outputs.

Every run directory holds the resolved ``config.txt`` (flat ``key = value``),
a ``manifest.json`` with derived quantities and the output file list, a
``summary.json`` and the CSV data files. Nothing depends on wall-clock time,
so rerunning a config reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .agm import AgmConfig, agm_optimize, forward_phases, write_control_csv, write_history_csv
from .errors import ConfigError, DivergenceError
from .gradcheck import TASKS, gradient_suite
from .kuramoto import PhaseLoss, order_parameter, sample_system, sync_residual, write_phase_csv
from .linear_oc import LinearControlProblem, oc_energy, oc_trajectory
from .networks import TOPOLOGIES, make_graph, write_edge_list
from .neuralnet import calibrate_initial_energy, init_control_net, net_forward, save_checkpoint
from .ode import TimeGrid, Trajectory, fmt, integrate_rk4, prefix_energy, write_trajectory_csv
from .trainer import (MSELoss, OPTIMIZERS, TrainConfig, delta_correlations, train, write_correlations_csv,
                      write_snapshots_csv, write_trainlog_csv)

log = logging.getLogger(__name__)

PRESETS = ("desk", "paper")
CONTROLLERS = ("none", "nodec", "agm")

# AGM step sizes found by sweeping the first update from u = 1 (see README);
# sparser graphs lock more slowly and need a larger step.
AGM_STEP_BY_TOPOLOGY = {
    "complete": 3e4,
    "erdos_renyi": 1e5,
    "lattice": 3e5,
    "watts_strogatz": 3e5,
}


# --------------------------------------------------------------------------- config

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _float_or_auto(text: str):
    return "auto" if text.strip() == "auto" else float(text)


def _render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Param:
    parse: Callable[[str], object]
    default: object
    help: str
    paper: object = None  # value under the paper preset, when it differs


LINEAR_PARAMS: dict[str, Param] = {
    "x0": Param(_floats, (1.0, 0.5), "initial state"),
    "x_target": Param(_floats, (0.0, 0.0), "target state"),
    "horizon": Param(float, 1.0, "control horizon T"),
    "steps": Param(int, 100, "RK4 steps on [0, T]"),
    "hidden": Param(_ints, (32, 32), "hidden layer widths"),
    "activation": Param(str, "elu", "hidden activation: tanh | elu | linear"),
    "optimizer": Param(str, "plain_gd", "plain_gd | adam"),
    "learning_rate": Param(float, 0.02, "gradient-descent step eta"),
    "epochs": Param(int, 30000, "training epochs"),
    "energy_lo": Param(float, 5.0, "lower edge of the initial-energy window"),
    "energy_hi": Param(float, 7.0, "upper edge of the initial-energy window"),
    "snapshot_epochs": Param(_ints, (500, 1000, 1500, 2000, 30000), "epochs whose control is stored"),
    "corr_window": Param(int, 1000, "epochs per correlation window"),
    "seed": Param(int, 0, "network initialization seed"),
}

KURAMOTO_PARAMS: dict[str, Param] = {
    "topology": Param(str, "complete", "complete | erdos_renyi | lattice | watts_strogatz"),
    "n": Param(int, 64, "number of oscillators (lattice needs a square)", paper=225),
    "horizon": Param(float, 3.0, "control horizon T"),
    "steps": Param(int, 300, "RK4 steps on [0, T]"),
    "coupling_factor": Param(float, 0.1, "K as a multiple of the critical coupling K*"),
    "er_p": Param(float, 0.3, "Erdos-Renyi edge probability"),
    "ws_k": Param(int, 5, "Watts-Strogatz degree (k // 2 ring neighbours per side)"),
    "ws_p": Param(float, 0.3, "Watts-Strogatz rewiring probability"),
    "seed": Param(int, 1, "graph, frequency, phase and network seed"),
    "hidden": Param(_ints, (32, 32), "NODEC hidden layer widths"),
    "activation": Param(str, "elu", "NODEC hidden activation"),
    "nodec_optimizer": Param(str, "adam", "plain_gd | adam"),
    "nodec_learning_rate": Param(float, 0.05, "NODEC step size"),
    "nodec_epochs": Param(int, 300, "NODEC training epochs", paper=600),
    "nodec_output_bias": Param(float, 1.0, "initial constant control of the network"),
    "agm_beta": Param(float, 0.0, "AGM energy weight beta"),
    "agm_learning_rate": Param(_float_or_auto, "auto", "AGM step; auto picks a per-topology value"),
    "agm_iterations": Param(int, 5, "AGM iterations"),
    "agm_max_halvings": Param(int, 30, "step halvings allowed per AGM iteration"),
    "agm_u0": Param(float, 1.0, "constant AGM starting control"),
}

SCHEMAS = {"linear": LINEAR_PARAMS, "kuramoto": KURAMOTO_PARAMS}


def default_config(experiment: str, preset: str = "desk") -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    schema = _schema(experiment)
    return {k: (p.paper if preset == "paper" and p.paper is not None else p.default) for k, p in schema.items()}


def _schema(experiment: str) -> dict[str, Param]:
    try:
        return SCHEMAS[experiment]
    except KeyError:
        raise ConfigError(f"unknown experiment {experiment!r}") from None


def apply_overrides(cfg: dict, experiment: str, pairs) -> dict:
    """Apply ``(key, text)`` pairs, parsing each with the schema's type."""
    schema = _schema(experiment)
    out = dict(cfg)
    for key, text in pairs:
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"unknown {experiment} config key {key!r}")
        try:
            out[key] = schema[key].parse(text.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
    return out


def parse_config_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_set(items) -> list[tuple[str, str]]:
    pairs = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key, value))
    return pairs


def load_config(experiment: str, preset: str = "desk", path=None, seed: int | None = None,
                overrides=()) -> dict:
    """Preset defaults, then the config file, then ``seed``, then ``--set`` overrides."""
    cfg = default_config(experiment, preset)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = apply_overrides(cfg, experiment, parse_config_text(text))
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg = apply_overrides(cfg, experiment, overrides)
    _validate(experiment, cfg)
    return cfg


def _validate(experiment: str, cfg: dict) -> None:
    if cfg["steps"] < 1 or not cfg["horizon"] > 0:
        raise ConfigError("need steps >= 1 and horizon > 0")
    if experiment == "linear":
        if cfg["optimizer"] not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if len(cfg["x0"]) != 2 or len(cfg["x_target"]) != 2:
            raise ConfigError("the two-node task needs 2-vectors for x0 and x_target")
        if cfg["learning_rate"] < 0 or cfg["epochs"] < 1:
            raise ConfigError("need learning_rate >= 0 and epochs >= 1")
    else:
        if cfg["topology"] not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}")
        if cfg["nodec_optimizer"] not in OPTIMIZERS:
            raise ConfigError(f"nodec_optimizer must be one of {OPTIMIZERS}")
        if cfg["agm_beta"] < 0 or cfg["nodec_epochs"] < 1 or cfg["agm_iterations"] < 0:
            raise ConfigError("need agm_beta >= 0, nodec_epochs >= 1, agm_iterations >= 0")
    if cfg["activation"] not in ("tanh", "elu", "linear"):
        raise ConfigError("activation must be tanh, elu or linear")


def render_config(experiment: str, cfg: dict) -> str:
    schema = _schema(experiment)
    lines = [f"# {experiment} experiment configuration (key = value)"]
    for key, param in schema.items():
        lines.append(f"# {param.help}")
        lines.append(f"{key} = {_render(cfg[key])}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- output helpers

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(payload: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _finish(out: Path, experiment: str, cfg: dict, derived: dict, summary: dict, extra=None) -> None:
    (out / "config.txt").write_text(render_config(experiment, cfg))
    write_json(summary, out / "summary.json")
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "experiment": experiment,
        "version": __version__,
        "config": cfg,
        "derived": derived,
        "outputs": files,
    }
    if extra:
        manifest.update(extra)
    write_json(manifest, out / "manifest.json")


def _net_trajectory(net, problem, grid: TimeGrid) -> Trajectory:
    t0, horizon = grid.t_start, grid.horizon
    return integrate_rk4(problem.rhs, lambda t: net_forward(net, t - t0, horizon), problem.x0, grid)


# --------------------------------------------------------------------------- linear

def run_linear(cfg: dict, out) -> dict:
    """Two-node NODEC experiment next to its minimum-energy reference.

    Raises ``DivergenceError`` after writing partial outputs when training
    blows up.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    B = np.array([[1.0], [0.0]])
    problem = LinearControlProblem(A, B, np.array(cfg["x0"]), np.array(cfg["x_target"]), cfg["horizon"])
    grid = TimeGrid(0.0, cfg["horizon"], cfg["steps"])

    oc_traj = oc_trajectory(problem, grid)
    e_oc = oc_energy(problem)

    net = init_control_net(1, cfg["hidden"], cfg["activation"], cfg["seed"])
    net = calibrate_initial_energy(net, grid, (cfg["energy_lo"], cfg["energy_hi"]))
    tcfg = TrainConfig(learning_rate=cfg["learning_rate"], epochs=cfg["epochs"], optimizer=cfg["optimizer"],
                       seed=cfg["seed"], energy_window=(cfg["energy_lo"], cfg["energy_hi"]),
                       snapshot_epochs=tuple(cfg["snapshot_epochs"]))
    final, tlog = train(net, problem, grid, tcfg, MSELoss(problem.x_target))

    write_trainlog_csv(tlog, out / "trainlog.csv")
    if tlog.snapshots:
        write_snapshots_csv(tlog, out / "snapshots.csv")
    write_trajectory_csv(oc_traj, out / "oc_trajectory.csv")
    save_checkpoint(final, out / "network.json")

    corr = delta_correlations(tlog, cfg["corr_window"]) if len(tlog) >= cfg["corr_window"] else []
    write_correlations_csv(corr, cfg["corr_window"], out / "correlations.csv")

    derived = {"E_T_oc": e_oc, "n_params": int(net.w.size),
               "initial_energy": float(tlog.E_T[0]) if tlog.E_T else None}
    summary = {"E_T_oc": e_oc, "diverged": tlog.diverged,
               "corr_windows": [{"window": i, "pearson_r": r, "p_value": p} for i, r, p in corr]}

    if tlog.diverged:
        summary.update(E_T_nodec=None, final_state_err=None, final_loss=None)
        _finish(out, "linear", cfg, derived, summary)
        raise DivergenceError("linear NODEC training diverged; partial outputs kept")

    nodec_traj = _net_trajectory(final, problem, grid)
    write_trajectory_csv(nodec_traj, out / "nodec_trajectory.csv")
    e_nodec_curve = prefix_energy(nodec_traj.controls, grid.h)
    e_oc_curve = prefix_energy(oc_traj.controls, grid.h)
    _write_csv(out / "energy_curves.csv", ["t", "E_oc", "E_nodec"],
               zip(grid.times, e_oc_curve, e_nodec_curve))
    _write_csv(out / "energy_epochs.csv", ["epoch", "E_T", "w_norm2"],
               zip(tlog.epoch, tlog.E_T, tlog.w_norm2))

    snap_rows = []
    for ep in sorted(tlog.snapshot_weights):
        traj = _net_trajectory(final.with_weights(tlog.snapshot_weights[ep]), problem, grid)
        snap_rows += [(ep, t, *x, *u) for t, x, u in zip(grid.times, traj.states, traj.controls)]
    if snap_rows:
        _write_csv(out / "snapshot_trajectories.csv", ["epoch", "t", "x_1", "x_2", "u_1"], snap_rows)

    rs = [r for _, r, _ in corr if math.isfinite(r)]
    summary.update(
        E_T_nodec=float(e_nodec_curve[-1]),
        E_T_oc_trapezoid=float(e_oc_curve[-1]),
        final_state_err=float(np.max(np.abs(tlog.final_state - problem.x_target))),
        final_loss=tlog.final_loss,
        corr_first=corr[0][1] if corr else None,
        corr_mean=float(np.mean(rs)) if rs else None,
    )
    _finish(out, "linear", cfg, derived, summary)
    return summary


# --------------------------------------------------------------------------- kuramoto

def build_kuramoto(cfg: dict):
    graph = make_graph(cfg["topology"], cfg["n"], cfg["seed"], er_p=cfg["er_p"], ws_k=cfg["ws_k"],
                       ws_p=cfg["ws_p"])
    system, k_star = sample_system(graph, cfg["seed"], horizon=cfg["horizon"],
                                   coupling_factor=cfg["coupling_factor"])
    return graph, system, k_star, TimeGrid(0.0, cfg["horizon"], cfg["steps"])


def agm_step_size(cfg: dict) -> float:
    lr = cfg["agm_learning_rate"]
    return AGM_STEP_BY_TOPOLOGY[cfg["topology"]] if lr == "auto" else float(lr)


def run_kuramoto(cfg: dict, controller: str, out) -> dict:
    """Kuramoto synchronization under no control, NODEC, or the adjoint-gradient method."""
    if controller not in CONTROLLERS:
        raise ConfigError(f"controller must be one of {CONTROLLERS}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    graph, system, k_star, grid = build_kuramoto(cfg)
    write_edge_list(graph, out / "edges.txt")
    derived = {"K": system.coupling, "K_star": k_star, "edges": len(graph.edges),
               "omega_inf": float(np.max(np.abs(system.omega)))}
    diverged = False
    summary: dict = {"controller": controller, "topology": cfg["topology"]}

    if controller == "none":
        traj = integrate_rk4(system.rhs, lambda t: np.ones(1), system.x0, grid)
        u_nodes = traj.controls
    elif controller == "nodec":
        net = init_control_net(1, cfg["hidden"], cfg["activation"], cfg["seed"],
                               output_bias=cfg["nodec_output_bias"])
        tcfg = TrainConfig(learning_rate=cfg["nodec_learning_rate"], epochs=cfg["nodec_epochs"],
                           optimizer=cfg["nodec_optimizer"], seed=cfg["seed"], energy_window=None,
                           snapshot_epochs=())
        final, tlog = train(net, system, grid, tcfg, PhaseLoss(graph.adjacency))
        write_trainlog_csv(tlog, out / "trainlog.csv")
        save_checkpoint(final, out / "network.json")
        derived["n_params"] = int(net.w.size)
        diverged = tlog.diverged
        traj = None if diverged else _net_trajectory(final, system, grid)
        u_nodes = None if traj is None else traj.controls
    else:
        eta = agm_step_size(cfg)
        derived["agm_learning_rate"] = eta
        acfg = AgmConfig(grid, beta=cfg["agm_beta"], learning_rate=eta, iterations=cfg["agm_iterations"],
                         seed=cfg["seed"], max_halvings=cfg["agm_max_halvings"])
        u_nodes, hist = agm_optimize(system, np.full(grid.steps + 1, cfg["agm_u0"]), acfg)
        write_history_csv(hist, out / "agm_history.csv")
        write_control_csv(grid, u_nodes, out / "agm_control.csv")
        diverged = hist.diverged
        summary["agm_final_learning_rate"] = hist.learning_rate[-1] if hist.learning_rate else None
        traj = None if diverged else forward_phases(system, u_nodes, grid)
        u_nodes = None if traj is None else traj.controls

    summary["diverged"] = diverged
    if traj is None:
        _finish(out, "kuramoto", cfg, derived, summary, {"controller": controller})
        raise DivergenceError(f"{controller} run diverged; partial outputs kept")

    energy = prefix_energy(u_nodes, grid.h)
    write_phase_csv(grid, traj.states, u_nodes, out / "phases.csv")
    _write_csv(out / "order_parameter.csv", ["t", "r"],
               ((t, order_parameter(th)) for t, th in zip(grid.times, traj.states)))
    _write_csv(out / "energy.csv", ["t", "E_t"], zip(grid.times, energy))
    summary.update(
        r_T=order_parameter(traj.final_state),
        sync_residual_T=sync_residual(system, traj.final_state, u_nodes[-1]),
        E_T=float(energy[-1]),
        K=system.coupling,
        K_star=k_star,
        omega_inf=derived["omega_inf"],
    )
    _finish(out, "kuramoto", cfg, derived, summary, {"controller": controller})
    return summary


# --------------------------------------------------------------------------- normalize

_SYSTEM_KEYS = ("topology", "n", "horizon", "steps", "coupling_factor", "er_p", "ws_k", "ws_p", "seed")


def _read_energy(run: Path) -> tuple[np.ndarray, np.ndarray]:
    path = run / "energy.csv"
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0] != ["t", "E_t"]:
        raise ConfigError(f"{path} does not have the t,E_t header")
    body = np.array(rows[1:], dtype=float).reshape(-1, 2)
    return body[:, 0], body[:, 1]


def _read_manifest(run: Path) -> dict:
    try:
        return json.loads((run / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read manifest in {run}: {exc}") from None


def normalize_energies(run_a, run_b, out) -> Path:
    """Divide both prefix-energy curves by the larger of the two final energies."""
    run_a, run_b = Path(run_a), Path(run_b)
    ta, ea = _read_energy(run_a)
    tb, eb = _read_energy(run_b)
    if ta.shape != tb.shape or not np.array_equal(ta, tb):
        raise ConfigError("runs use different time grids")
    ma, mb = _read_manifest(run_a), _read_manifest(run_b)
    ca, cb = ma.get("config", {}), mb.get("config", {})
    diff = [k for k in _SYSTEM_KEYS if ca.get(k) != cb.get(k)]
    if diff:
        raise ConfigError(f"runs describe different systems (keys: {', '.join(diff)})")
    scale = max(ea[-1], eb[-1])
    if not scale > 0:
        raise ConfigError("both runs have zero final energy")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    la = f"a_{ma.get('controller', 'run')}"
    lb = f"b_{mb.get('controller', 'run')}"
    path = _write_csv(out / "normalized_energy.csv", ["t", la, lb], zip(ta, ea / scale, eb / scale))
    write_json({"run_a": str(run_a), "run_b": str(run_b), "scale": float(scale),
                "final_a": float(ea[-1] / scale), "final_b": float(eb[-1] / scale)},
               out / "normalize.json")
    return path


# --------------------------------------------------------------------------- gradcheck

def run_gradcheck(out, seeds: int = 20, tol: float = 1e-5) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = gradient_suite(range(1, seeds + 1), TASKS)
    _write_csv(out / "gradcheck.csv", ["task", "seed", "n_params", "max_rel_error"],
               ((r.task, r.seed, r.n_params, r.max_rel_error) for r in rows))
    worst = max(r.max_rel_error for r in rows)
    summary = {"seeds": seeds, "tasks": list(TASKS), "tolerance": tol, "max_rel_error": worst,
               "passed": bool(worst <= tol)}
    write_json(summary, out / "summary.json")
    return summary


__all__ = [
    "AGM_STEP_BY_TOPOLOGY", "CONTROLLERS", "KURAMOTO_PARAMS", "LINEAR_PARAMS", "PRESETS",
    "agm_step_size", "apply_overrides", "build_kuramoto", "default_config", "load_config",
    "normalize_energies", "parse_config_text", "parse_set", "render_config", "run_gradcheck",
    "run_kuramoto", "run_linear", "write_json",
]
