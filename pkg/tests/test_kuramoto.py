import numpy as np
import pytest
from hypothesis import given, strategies as st

from nodec.errors import ConnectivityError, DimensionError
from nodec.kuramoto import (KuramotoSystem, PhaseLoss, coupling_sums, critical_coupling, edge_spread,
                            kuramoto_loss, kuramoto_rhs, order_parameter, phase_loss, phase_loss_grad,
                            sample_system, sync_residual, write_phase_csv)
from nodec.networks import Graph, complete, make_graph
from nodec.ode import TimeGrid, integrate_rk4

angles = st.lists(st.floats(-10.0, 10.0), min_size=2, max_size=12)


def _system(seed=0, n=6, mode="global_scalar"):
    rng = np.random.default_rng(seed)
    g = make_graph("erdos_renyi", n, seed, er_p=0.5)
    return KuramotoSystem(g, rng.normal(0, 0.2, n), 0.8, rng.normal(0, 1.0, n), 1.0, mode)


@given(angles)
def test_coupling_sums_match_direct_sum(theta):
    theta = np.array(theta)
    g = complete(len(theta))
    direct = np.sum(g.adjacency * np.sin(theta[None, :] - theta[:, None]), axis=1)
    assert np.allclose(coupling_sums(g.adjacency, theta), direct, atol=1e-12)


def test_rhs_modes():
    sys = _system()
    th = sys.theta0
    base = sys.coupling / sys.n * coupling_sums(sys.graph.adjacency, th)
    assert np.allclose(kuramoto_rhs(sys, th, [2.0]), sys.omega + 2.0 * base)
    one = _system(mode="constant_one")
    assert np.allclose(kuramoto_rhs(one, th, [7.0]), one.omega + base)
    per = _system(mode="per_node")
    u = np.arange(6.0)
    assert np.allclose(kuramoto_rhs(per, th, u), per.omega + u * base)
    assert per.control_dim == 6 and sys.control_dim == 1


def test_system_validation():
    g = complete(3)
    with pytest.raises(DimensionError):
        KuramotoSystem(g, np.zeros(2), 1.0, np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        KuramotoSystem(g, np.zeros(3), 0.0, np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        KuramotoSystem(g, np.zeros(3), 1.0, np.zeros(3), 1.0, "bogus")


@pytest.mark.parametrize("mode", ["global_scalar", "per_node", "constant_one"])
def test_rhs_vjp_matches_finite_differences(mode):
    sys = _system(3, mode=mode)
    rng = np.random.default_rng(4)
    th = rng.normal(size=6)
    u = rng.uniform(0.5, 2.0, sys.control_dim)
    g = rng.normal(size=6)
    gx, gu = sys.rhs_vjp(0.0, th, u, g)
    eps = 1e-6
    fdx = np.array([(g @ sys.rhs(0, th + eps * e, u) - g @ sys.rhs(0, th - eps * e, u)) / (2 * eps)
                    for e in np.eye(6)])
    fdu = np.array([(g @ sys.rhs(0, th, u + eps * e) - g @ sys.rhs(0, th, u - eps * e)) / (2 * eps)
                    for e in np.eye(u.size)])
    assert np.allclose(gx, fdx, atol=1e-8)
    assert np.allclose(gu, fdu, atol=1e-8)


@given(angles, st.floats(-5.0, 5.0))
def test_order_parameter_bounds_and_shift_invariance(theta, shift):
    theta = np.array(theta)
    r = order_parameter(theta)
    assert 0.0 <= r <= 1.0 + 1e-12
    assert order_parameter(theta + shift) == pytest.approx(r, abs=1e-9)


def test_order_parameter_matches_pair_sum():
    theta = np.array([0.1, 0.9, -1.3, 2.0])
    pair = np.sqrt(np.sum(np.cos(theta[None, :] - theta[:, None]))) / 4
    assert order_parameter(theta) == pytest.approx(pair, rel=1e-12)
    assert order_parameter(np.full(5, 0.4)) == pytest.approx(1.0)
    assert order_parameter(np.array([0.0, np.pi])) == pytest.approx(0.0, abs=1e-15)


def test_critical_coupling_analytic():
    assert critical_coupling(complete(2), [1.0, -1.0]) == pytest.approx(1.0, abs=1e-10)
    assert critical_coupling(complete(5), np.full(5, 0.3)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConnectivityError):
        critical_coupling(Graph.from_edges(4, [(0, 1), (2, 3)]), np.zeros(4))


@given(st.integers(0, 10**6))
def test_critical_coupling_sends_frequencies_through_laplacian(seed):
    # K* x = L^+ Omega solves L x = Omega - mean(Omega), so K* scales linearly with Omega
    g = make_graph("lattice", 9, 0)
    omega = np.random.default_rng(seed).normal(size=9)
    assert critical_coupling(g, 3.0 * omega) == pytest.approx(3.0 * critical_coupling(g, omega), rel=1e-10)
    assert critical_coupling(g, omega + 5.0) == pytest.approx(critical_coupling(g, omega), rel=1e-8)


def test_edge_spread_and_residual():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert edge_spread(g, [0.0, 1.0, 3.0]) == 2.0
    sys = KuramotoSystem(complete(4), np.full(4, 0.2), 1.0, np.zeros(4), 1.0)
    assert sync_residual(sys, np.zeros(4), [1.0]) == pytest.approx(0.0)


@given(angles)
def test_phase_loss_gradient(theta):
    theta = np.array(theta)
    adj = complete(len(theta)).adjacency
    eps = 1e-6
    fd = np.array([(phase_loss(adj, theta + eps * e) - phase_loss(adj, theta - eps * e)) / (2 * eps)
                   for e in np.eye(len(theta))])
    assert np.allclose(phase_loss_grad(adj, theta), fd, atol=1e-6)
    assert phase_loss(adj, theta) >= 0.0
    # sin^2 is pi-periodic: antiphase pairs also score zero
    assert phase_loss(adj, np.where(np.arange(len(theta)) % 2, np.pi, 0.0)) == pytest.approx(0.0, abs=1e-20)


def test_kuramoto_loss_energy_term():
    sys = _system()
    u = np.ones((11, 1))
    base = kuramoto_loss(sys, sys.theta0, 0.0)
    assert kuramoto_loss(sys, sys.theta0, 0.5, u, 0.1) == pytest.approx(base + 0.5 * 0.5 * 1.0)
    with pytest.raises(ValueError):
        kuramoto_loss(sys, sys.theta0, -1.0)
    assert PhaseLoss(sys.graph.adjacency).value(sys.theta0) == base


def test_sample_system_is_seeded():
    g = make_graph("complete", 10, 0)
    a, ka = sample_system(g, 7)
    b, kb = sample_system(g, 7)
    assert np.array_equal(a.omega, b.omega) and np.array_equal(a.theta0, b.theta0) and ka == kb
    assert a.coupling == pytest.approx(0.1 * ka)
    c, _ = sample_system(g, 8)
    assert not np.array_equal(a.omega, c.omega)
    assert not np.array_equal(a.omega, a.theta0)


def test_uncontrolled_phases_drift_apart():
    g = make_graph("complete", 64, 1)
    sys, _ = sample_system(g, 1)
    grid = TimeGrid(0.0, 3.0, 300)
    tr = integrate_rk4(sys.rhs, lambda t: np.ones(1), sys.x0, grid)
    assert order_parameter(tr.final_state) < order_parameter(sys.theta0)


def test_phase_csv(tmp_path):
    sys = _system()
    grid = TimeGrid(0.0, 1.0, 4)
    tr = integrate_rk4(sys.rhs, lambda t: np.ones(1), sys.x0, grid)
    lines = write_phase_csv(grid, tr.states, tr.controls, tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t," + ",".join(f"theta_{i}" for i in range(1, 7)) + ",r,u"
    assert len(lines) == 6
