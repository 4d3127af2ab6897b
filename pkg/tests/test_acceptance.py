"""Acceptance checks, one test (or one parametrized family) per criterion.

Each check records its outcome in ``RESULTS``; the conftest terminal-summary
hook prints a single pass/fail line per criterion.
"""

import json
import math
import os
import time
from collections import defaultdict

import numpy as np
import pytest

from nodec.experiments import load_config, normalize_energies, run_kuramoto, run_linear
from nodec.gradcheck import gradient_suite
from nodec.kuramoto import critical_coupling, order_parameter, sample_system, sync_residual
from nodec.linear_oc import gramian, oc_energy, oc_trajectory, two_node_problem
from nodec.networks import TOPOLOGIES, complete, make_graph
from nodec.numkit import mat_exp
from nodec.ode import TimeGrid, control_energy, integrate_rk4

RESULTS = defaultdict(list)


def record(crit, ok, detail):
    RESULTS[crit].append((bool(ok), detail))
    assert ok, f"criterion {crit}: {detail}"


def series_exp(a, terms=50):
    """Reference exponential: scale to norm <= 1/2, sum ``terms`` Taylor terms, square back."""
    norm = np.linalg.norm(a, 1)
    s = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0 else 0
    b = a / 2.0 ** s
    out = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, terms):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


# --------------------------------------------------------------------------- 1

def test_criterion_01_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 11))
        a = rng.normal(0.0, 1.0, (n, n))
        ref = series_exp(a)
        worst = max(worst, np.max(np.abs(mat_exp(a) - ref)) / np.max(np.abs(ref)))
    e = math.e
    w11 = (e ** 2 - 1) / 2
    closed = np.array([[w11, w11 - (e - 1)], [w11 - (e - 1), w11 - 2 * (e - 1) + 1]])
    gerr = np.max(np.abs(gramian(two_node_problem()) - closed))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and gerr <= 1e-8 and elapsed < 10
    record(1, ok, f"mat_exp rel err {worst:.2e}, gramian err {gerr:.2e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------- 2

def test_criterion_02_oc_steering():
    t0 = time.perf_counter()
    p = two_node_problem()
    tr = oc_trajectory(p, TimeGrid(0.0, p.horizon, 300))
    err = float(np.max(np.abs(tr.final_state - p.x_target)))
    rel = abs(control_energy(tr) - oc_energy(p)) / oc_energy(p)
    elapsed = time.perf_counter() - t0
    record(2, err <= 1e-5 and rel <= 1e-4 and elapsed < 5,
           f"|x(T)-x*| {err:.2e}, energy rel diff {rel:.2e} (E_oc {oc_energy(p):.6f}), {elapsed:.2f}s")


# --------------------------------------------------------------------------- 3

def test_criterion_03_gradient_suite():
    t0 = time.perf_counter()
    rows = gradient_suite(range(1, 21), ("linear", "kuramoto"))
    worst = max(r.max_rel_error for r in rows)
    elapsed = time.perf_counter() - t0
    record(3, len(rows) == 40 and worst <= 1e-5 and elapsed < 120,
           f"40 cases, max rel err {worst:.2e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------- 4, 5

@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear")
    t0 = time.perf_counter()
    summary = run_linear(load_config("linear"), out)
    return out, summary, time.perf_counter() - t0


def test_criterion_04_linear_reproduction(linear_run):
    _, s, elapsed = linear_run
    rel = abs(s["E_T_nodec"] - s["E_T_oc"]) / s["E_T_oc"]
    record(4, s["final_state_err"] <= 0.05 and rel <= 0.15 and elapsed < 300,
           f"|x(T)-x*| {s['final_state_err']:.2e}, E_nodec {s['E_T_nodec']:.4f} vs E_oc {s['E_T_oc']:.4f} "
           f"(rel {rel:.3f}), {elapsed:.1f}s")


def test_criterion_05_correlations(linear_run):
    _, s, _ = linear_run
    # windows whose updates sit below float64 resolution report nan and are left out
    wins = [w for w in s["corr_windows"] if w["pearson_r"] is not None and math.isfinite(w["pearson_r"])]
    first = s["corr_windows"][0]["pearson_r"]
    mean = float(np.mean([w["pearson_r"] for w in wins]))
    worst_p = max(w["p_value"] for w in wins)
    ok = math.isfinite(first) and first >= 0.8 and mean >= 0.5 and worst_p < 1e-6
    record(5, ok, f"first window r {first:.3f}, mean r {mean:.3f} over {len(wins)} of "
                  f"{len(s['corr_windows'])} windows, max p {worst_p:.1e}")


# --------------------------------------------------------------------------- 6

@pytest.mark.parametrize("topology", TOPOLOGIES)
def test_criterion_06_uncontrolled_baseline(topology):
    grid = TimeGrid(0.0, 3.0, 300)
    worst_margin = math.inf
    for seed in range(1, 11):
        cfg = load_config("kuramoto", seed=seed, overrides=[("topology", topology)])
        g = make_graph(topology, cfg["n"], seed)
        sys, _ = sample_system(g, seed, horizon=cfg["horizon"], coupling_factor=cfg["coupling_factor"])
        tr = integrate_rk4(sys.rhs, lambda t: np.ones(1), sys.x0, grid)
        res = sync_residual(sys, tr.final_state, [1.0])
        worst_margin = min(worst_margin, res / (0.1 * np.max(np.abs(sys.omega))))
    record(6, worst_margin > 1.0, f"{topology}: min residual / (0.1 |omega|_inf) = {worst_margin:.2f}")


# --------------------------------------------------------------------------- 7, 8

@pytest.fixture(scope="module")
def kuramoto_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("kuramoto")
    cache = {}

    def get(topology, controller):
        key = (topology, controller)
        if key not in cache:
            out = base / f"{topology}-{controller}"
            t0 = time.perf_counter()
            summary = run_kuramoto(load_config("kuramoto", overrides=[("topology", topology)]), controller, out)
            cache[key] = (out, summary, time.perf_counter() - t0)
        return cache[key]

    return get


@pytest.mark.parametrize("topology", TOPOLOGIES)
def test_criterion_07_kuramoto_nodec(kuramoto_runs, topology):
    _, s, elapsed = kuramoto_runs(topology, "nodec")
    ok = s["r_T"] >= 0.95 and s["sync_residual_T"] <= 0.05 and elapsed < 600
    record(7, ok, f"{topology}: r(T) {s['r_T']:.4f}, residual {s['sync_residual_T']:.4f}, {elapsed:.0f}s")


@pytest.mark.parametrize("topology", TOPOLOGIES)
def test_criterion_08_kuramoto_agm(kuramoto_runs, topology, tmp_path):
    out_agm, s, elapsed = kuramoto_runs(topology, "agm")
    out_nodec, sn, _ = kuramoto_runs(topology, "nodec")
    ratio = sn["E_T"] / s["E_T"]
    path = normalize_energies(out_nodec, out_agm, tmp_path / "norm")
    body = np.loadtxt(path, delimiter=",", skiprows=1)
    curves = body[:, 1:]
    in_range = bool(np.all((curves >= 0.0) & (curves <= 1.0)))
    top = float(np.max(curves[-1]))
    ok = (s["r_T"] >= 0.95 and s["sync_residual_T"] <= 0.05 and elapsed < 600
          and 1 / 3 <= ratio <= 3 and in_range and top == 1.0)
    record(8, ok, f"{topology}: r(T) {s['r_T']:.4f}, residual {s['sync_residual_T']:.4f}, "
                  f"E_nodec/E_agm {ratio:.2f}, normalized max final {top}")


# --------------------------------------------------------------------------- 9

def test_criterion_09_critical_coupling():
    k2 = critical_coupling(complete(2), [1.0, -1.0])
    k0 = critical_coupling(complete(6), np.full(6, 0.7))
    record(9, abs(k2 - 1.0) <= 1e-10 and abs(k0) <= 1e-10, f"K*(complete 2) = {k2!r}, K*(constant) = {k0:.1e}")


# --------------------------------------------------------------------------- 10

def _csv_bytes(out):
    names = json.loads((out / "manifest.json").read_text())["outputs"]
    return {n: (out / n).read_bytes() for n in names if n.endswith(".csv")}


@pytest.mark.parametrize("controller", ["none", "nodec", "agm"])
def test_criterion_10_kuramoto_reproducible(kuramoto_runs, controller, tmp_path):
    out, _, _ = kuramoto_runs("complete", controller)
    cfg = load_config("kuramoto", path=out / "config.txt")
    run_kuramoto(cfg, controller, tmp_path / "again")
    a, b = _csv_bytes(out), _csv_bytes(tmp_path / "again")
    record(10, a == b and len(a) > 0, f"kuramoto/{controller}: {len(a)} CSV files identical: {a == b}")


def test_criterion_10_linear_reproducible(linear_run, tmp_path):
    out, _, _ = linear_run
    run_linear(load_config("linear", path=out / "config.txt"), tmp_path / "again")
    a, b = _csv_bytes(out), _csv_bytes(tmp_path / "again")
    record(10, a == b and len(a) > 0, f"linear: {len(a)} CSV files identical: {a == b}")


# --------------------------------------------------------------------------- 11 (non-gating)

@pytest.mark.slow
def test_criterion_11_full_scale(tmp_path):
    if not os.environ.get("NODEC_FULL_SCALE"):
        RESULTS[11].append((None, "non-gating full-scale run skipped (set NODEC_FULL_SCALE=1)"))
        pytest.skip("full-scale smoke run is opt-in")
    t0 = time.perf_counter()
    lines = []
    for topology in TOPOLOGIES:
        cfg = load_config("kuramoto", "paper", overrides=[("topology", topology)])
        for controller in ("nodec", "agm"):
            s = run_kuramoto(cfg, controller, tmp_path / f"{topology}-{controller}")
            lines.append(f"{topology}/{controller} r(T) {s['r_T']:.3f}")
    elapsed = time.perf_counter() - t0
    record(11, elapsed < 7200, f"{', '.join(lines)}; {elapsed:.0f}s total")
