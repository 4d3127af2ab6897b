import numpy as np
import pytest
from hypothesis import given, strategies as st

from nodec.errors import DimensionError
from nodec.linear_oc import oc_energy, two_node_problem
from nodec.neuralnet import calibrate_initial_energy, init_control_net, loss_and_grad
from nodec.ode import TimeGrid
from nodec.trainer import (MSELoss, TrainConfig, TrainLog, delta_correlations, gd_step, mse_loss, taylor_check,
                           train, write_correlations_csv, write_snapshots_csv, write_trainlog_csv)

GRID = TimeGrid(0.0, 1.0, 50)


def _setup(seed=0):
    p = two_node_problem()
    net = calibrate_initial_energy(init_control_net(1, (8, 8), "elu", seed), GRID, (5.0, 7.0))
    return p, net


def test_mse_loss():
    assert mse_loss([1.0, 3.0], [0.0, 1.0]) == pytest.approx(2.5)
    with pytest.raises(DimensionError):
        mse_loss([1.0], [0.0, 1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_mse_loss_nonnegative_and_zero_on_target(x):
    assert mse_loss(x, x) == 0.0
    assert mse_loss(x, np.zeros(len(x))) >= 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


def test_single_epoch_is_one_gradient_step():
    p, net = _setup()
    res = loss_and_grad(net, p, GRID, MSELoss(p.x_target))
    final, _ = train(net, p, GRID, TrainConfig(0.02, 1, snapshot_epochs=()), MSELoss(p.x_target))
    assert np.array_equal(final.w, gd_step(net.w, res.grad_w, 0.02))


def test_zero_learning_rate_keeps_loss():
    p, net = _setup()
    _, log = train(net, p, GRID, TrainConfig(0.0, 5, snapshot_epochs=()), MSELoss(p.x_target))
    assert log.final_loss == log.loss[0]
    assert all(v == 0.0 for v in log.dw_norm2)


def test_training_reduces_loss_and_logs():
    p, net = _setup()
    cfg = TrainConfig(0.02, 400, snapshot_epochs=(0, 100, 400))
    final, log = train(net, p, GRID, cfg, MSELoss(p.x_target))
    assert not log.diverged and len(log) == 400
    assert log.final_loss < 0.5 * log.loss[0]
    assert sorted(log.snapshots) == [0, 100, 400]
    assert np.array_equal(log.snapshot_weights[400], final.w)
    assert log.prefix_energies[0][-1] == pytest.approx(log.E_T[0])
    assert 5.0 <= log.E_T[0] <= 7.0
    # row n compares w^(n) with w^(n+1)
    step = gd_step(net.w, loss_and_grad(net, p, GRID, MSELoss(p.x_target)).grad_w, 0.02) - net.w
    assert log.dw_norm2[0] == pytest.approx(float(step @ step))


def test_adam_trains():
    p, net = _setup()
    _, log = train(net, p, GRID, TrainConfig(0.01, 300, optimizer="adam", snapshot_epochs=()), MSELoss(p.x_target))
    assert log.final_loss < 0.1 * log.loss[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_flagged():
    p, net = _setup()
    _, log = train(net, p, GRID, TrainConfig(50.0, 200, snapshot_epochs=()), MSELoss(p.x_target))
    assert log.diverged


def test_energy_moves_toward_oc_value():
    p, net = _setup(1)
    _, log = train(net, p, GRID, TrainConfig(0.02, 3000, snapshot_epochs=()), MSELoss(p.x_target))
    assert abs(log.E_T[-1] - oc_energy(p)) < 0.05 * oc_energy(p)


def test_delta_correlations_synthetic():
    log = TrainLog(GRID)
    rng = np.random.default_rng(0)
    dw = rng.uniform(1.0, 2.0, 2500)
    log.dw_norm2 = list(dw)
    log.du_norm2 = list(3.0 * dw + rng.normal(0, 1e-3, 2500))
    log.w_norm2 = [1.0] * 2500
    rows = delta_correlations(log, 1000)
    assert [i for i, _, _ in rows] == [0, 1]  # partial window dropped
    assert all(r > 0.999 and p < 1e-12 for _, r, p in rows)


def test_delta_correlations_masks_round_off_windows():
    log = TrainLog(GRID)
    log.dw_norm2 = list(np.linspace(1e-40, 2e-40, 10))
    log.du_norm2 = list(np.linspace(1.0, 2.0, 10))
    log.w_norm2 = [100.0] * 10
    (_, r, p), = delta_correlations(log, 10)
    assert np.isnan(r) and np.isnan(p)
    with pytest.raises(ValueError):
        delta_correlations(log, 2)


def test_taylor_check_is_second_order():
    net = init_control_net(1, (6,), "tanh", 0)
    net = net.with_weights(np.random.default_rng(1).normal(size=net.w.size))
    d = np.random.default_rng(2).normal(size=net.w.size)
    r1 = taylor_check(net, 1e-3 * d, GRID)
    r2 = taylor_check(net, 5e-4 * d, GRID)
    assert r2 == pytest.approx(r1 / 4, rel=0.05)


def test_csv_headers(tmp_path):
    p, net = _setup()
    _, log = train(net, p, GRID, TrainConfig(0.02, 3, snapshot_epochs=(0, 3)), MSELoss(p.x_target))
    assert (write_trainlog_csv(log, tmp_path / "a.csv").read_text().splitlines()[0]
            == "epoch,loss,E_T,w_norm2,dw_norm2,du_norm2")
    lines = write_snapshots_csv(log, tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "epoch,t,u_1" and len(lines) == 1 + 2 * 51
    assert (write_correlations_csv([(0, 0.5, 1e-9)], 1000, tmp_path / "c.csv").read_text().splitlines()
            == ["window,epoch_start,pearson_r,p_value", "0,0,0.5,1.0000000000000001e-09"])
