import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ranlb.baselines import (A3Controller, CDQLAgent, ReBuHaController, a3_controller, cdql_select, cdql_targets,
                             cdql_update, cio_to_action, rebuha_step)
from ranlb.config import CDQLParams, ReBuHaParams
from ranlb.nn import Adam, DenseNet
from ranlb.telemetry import CellKPIWindow

P = ReBuHaParams()


def test_a3_is_zero():
    assert np.array_equal(a3_controller(np.ones(18)), np.zeros(3))
    assert np.array_equal(A3Controller(3).act(np.ones(18), {}), np.zeros(3))


def test_rebuha_example():
    assert rebuha_step([0, 0, 0], [0.9, 0.3, 0.3], P).tolist() == [-1.0, 1.0, 0.0]


def test_rebuha_relaxes_between_thresholds():
    cio = np.array([3.0, -2.0, 0.5])
    out = rebuha_step(cio, [0.6, 0.7, 0.6], P)
    assert out.tolist() == [2.0, -1.0, 0.0]


def test_rebuha_no_boost_without_spare_capacity():
    assert rebuha_step([0, 0, 0], [0.9, 0.6, 0.7], P).tolist() == [-1.0, 0.0, 0.0]


def test_rebuha_clamps():
    cio = np.zeros(3)
    for _ in range(20):
        cio = rebuha_step(cio, [0.95, 0.1, 0.2], P)
    assert cio.tolist() == [-6.0, 6.0, 0.0]


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(-6, 6), min_size=3, max_size=3))
def test_rebuha_deterministic_and_bounded(eta, cio):
    a = rebuha_step(cio, eta, P)
    assert np.array_equal(a, rebuha_step(cio, eta, P))
    assert np.all((a >= -6) & (a <= 6))


def test_rebuha_controller_actions_in_range():
    c = ReBuHaController(3)
    w = CellKPIWindow.zeros(3)
    w.eta = np.array([0.95, 0.2, 0.4])
    assert np.array_equal(c.act(None, {}), np.zeros(3))
    a = c.act(None, {"window": w})
    assert np.allclose(a, cio_to_action(np.array([-1.0, 1.0, 0.0]), -6, 6))
    noisy = ReBuHaController(3, ReBuHaParams(clean_utilization=False))
    assert np.allclose(noisy.act(None, {"window": w, "observed_eta": np.array([0.1, 0.95, 0.2])}),
                       cio_to_action(np.array([1.0, -1.0, 0.0]), -6, 6))


def test_cdql_select_greedy_and_random():
    net = DenseNet((2, 6))
    q = np.array([[1.0, 5.0, 5.0, 0.0, -1.0, 2.0]])
    net.load_params([np.zeros((2, 6)) + 0.0, q[0]])
    rng = np.random.default_rng(0)
    assert cdql_select(np.zeros(2), net, 2, (-1.0, 0.0, 1.0), 0.0, rng).tolist() == [1, 2]
    picks = np.array([cdql_select(np.zeros(2), net, 2, (-1.0, 0.0, 1.0), 1.0, rng) for _ in range(3000)])
    counts = np.bincount(picks.ravel(), minlength=3) / picks.size
    assert np.allclose(counts, 1 / 3, atol=0.03)


def _const_net(values, obs_dim=1):
    net = DenseNet((obs_dim, len(values)))
    net.load_params([np.zeros((obs_dim, len(values))), np.asarray(values, dtype=float)])
    return net


def test_cdql_target_takes_min_at_q1_argmax():
    q1t = _const_net([1.0, 3.0])  # one head, two levels: argmax is level 1
    q2t = _const_net([9.0, 2.0])
    batch = {"nxt": np.zeros((2, 1)), "rew": np.array([1.0, 1.0]), "done": np.array([0.0, 1.0])}
    y = cdql_targets(batch, q1t, q2t, 1, 2, 0.5)
    assert y[:, 0].tolist() == [1.0 + 0.5 * 2.0, 1.0]
    same = cdql_targets(batch, q1t, q1t, 1, 2, 0.5)
    assert same[0, 0] == 1.0 + 0.5 * 3.0


def test_cdql_single_transition_overfit():
    rng = np.random.default_rng(0)
    q1, q2 = DenseNet((3, 16, 6), rng), DenseNet((3, 16, 6), rng)
    o1, o2 = Adam(q1.params, lr=3e-3), Adam(q2.params, lr=3e-3)
    batch = {"obs": np.array([[0.5, -1.0, 0.2]]), "act": np.array([[1, 0]]), "rew": np.array([0.7]),
             "nxt": np.zeros((1, 3)), "done": np.array([1.0])}
    for _ in range(500):
        l1, l2 = cdql_update(batch, q1, q2, q1, q2, o1, o2, 2, 3, 0.99)
    assert l1 < 1e-6 and l2 < 1e-6
    assert q1(batch["obs"][0]).reshape(2, 3)[0, 1] == pytest.approx(0.7, abs=1e-3)


def test_cdql_actions_on_grid_and_roundtrip(tmp_path):
    p = CDQLParams(hidden=(8,))
    agent = CDQLAgent(4, 3, p, seed=0)
    rng = np.random.default_rng(0)
    grid = cio_to_action(np.array(p.levels), -6, 6)
    for _ in range(50):
        a = agent.levels_to_action(agent.select(rng.normal(size=4), 0.5))
        assert all(np.isclose(grid, v).any() for v in a)
    agent.save(tmp_path / "c.npz")
    back = CDQLAgent.load(tmp_path / "c.npz", p)
    o = rng.normal(size=4)
    assert np.array_equal(back.act(o), agent.act(o))


def test_cdql_levels_must_fit_bounds():
    with pytest.raises(ValueError):
        CDQLAgent(4, 3, CDQLParams(levels=(-9.0, 0.0)), seed=0)
