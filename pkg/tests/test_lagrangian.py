import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sarrm.channel import GeometryConfig, fading_gains, generate_realization
from sarrm.errors import DomainError
from sarrm.gnn import GraphNet
from sarrm.lagrangian import (EpisodeTrace, dual_trajectory, dual_update, episode_objective, lagrangian,
                              lagrangian_terms, rollout, window_constraint, window_slacks)
from sarrm.rate import dbm_to_watts

P_MAX = dbm_to_watts(10)
NOISE = dbm_to_watts(-104)


@pytest.fixture(scope="module")
def setup():
    real = generate_realization(GeometryConfig(m=4, seed=21))
    net = GraphNet(widths=(8, 8), out_scale=P_MAX, g_ref=float(np.median(np.diag(real.long_term_gain))))
    flat = net.init_params(np.random.default_rng(0))
    gains = fading_gains(real.long_term_gain, 10, seed=3)
    return net, flat, gains


def test_fixture_arithmetic():
    L, diag = lagrangian_terms(np.array([0.7, 0.3]), np.array([1.0, 2.0]), 0.5)
    assert L == pytest.approx(0.8, abs=1e-12)
    assert diag["utility"] == pytest.approx(1.0)
    assert diag["penalty"] == pytest.approx(-0.2)


def test_zero_duals_give_utility(setup):
    net, flat, gains = setup
    L, diag = lagrangian(net, flat, np.zeros(4), gains, 0.5, NOISE)
    assert L == diag["utility"]
    assert diag["penalty"] == 0.0


def test_zero_slack_gives_utility():
    x = np.full(3, 0.5)
    L, diag = lagrangian_terms(x, np.array([3.0, 1.0, 7.0]), 0.5)
    assert L == diag["utility"] == pytest.approx(1.5)


def test_decomposition(setup):
    net, flat, gains = setup
    rng = np.random.default_rng(1)
    for _ in range(5):
        L, diag = lagrangian(net, flat, rng.exponential(2.0, 4), gains, 0.8, NOISE)
        assert abs(L - (diag["utility"] + diag["penalty"])) <= 1e-12


def test_negative_dual_rejected(setup):
    net, flat, gains = setup
    with pytest.raises(DomainError):
        lagrangian(net, flat, np.array([1.0, -0.1, 0, 0]), gains, 0.5, NOISE)
    with pytest.raises(DomainError):
        lagrangian(net, flat, np.zeros(4), gains[:0], 0.5, NOISE)


def test_single_window_consistency(setup):
    net, flat, gains = setup
    mu = np.array([0.5, 1.0, 0.0, 2.0])
    window = gains[:5]
    L, diag = lagrangian(net, flat, mu, window, 0.6, NOISE)
    slack = window_constraint(net, flat, mu, window, 0.6, NOISE)
    assert abs(L - (diag["utility"] + mu @ slack)) <= 1e-12


def test_episode_objective_matches_single_episodes(setup):
    net, flat, gains = setup
    mus = np.array([[0.0, 1.0, 2.0, 0.5], [3.0, 0.0, 0.1, 1.0]])
    batch = episode_objective(net, flat, mus, np.stack([gains, gains[::-1]]), 0.5, NOISE, chunk=1)
    for b, g in enumerate((gains, gains[::-1])):
        L, _ = lagrangian(net, flat, mus[b], g, 0.5, NOISE)
        assert batch.lagrangian[b] == pytest.approx(L, rel=1e-12)
    other = episode_objective(net, flat, mus, np.stack([gains, gains[::-1]]), 0.5, NOISE, chunk=16)
    assert np.allclose(other.grad, batch.grad, rtol=1e-12)


def test_window_slack_cases():
    r = np.full((5, 2), 0.5)
    assert window_slacks(r, 5, 0.5) == pytest.approx(np.zeros((1, 2)))
    r = np.random.default_rng(0).random((4, 3))
    assert np.array_equal(window_slacks(r, 1, 0.2), r - 0.2)
    r = np.array([[0.1, 1.0], [0.2, 1.0], [0.3, 1.0], [0.4, 1.0], [0.5, 1.0]])
    assert window_slacks(r, 5, 0.5)[0] == pytest.approx([0.3 - 0.5, 0.5])


def test_window_constraint_matches_rollout(setup):
    net, flat, gains = setup
    mu = np.ones(4)
    _, f = rollout(net, flat, mu, gains[:5], NOISE)
    assert window_constraint(net, flat, mu, gains[:5], 0.4, NOISE) == pytest.approx(f.mean(axis=0) - 0.4)


def test_dual_update_examples():
    assert dual_update(np.array([0.3, 2.0]), np.zeros(2), 2.0) == pytest.approx([0.3, 2.0])
    assert dual_update(np.array([0.1]), np.array([1.0]), 2.0) == pytest.approx([0.0])
    assert dual_update(np.array([1.0, 0.0]), np.array([-0.2, -0.2]), 2.0) == pytest.approx([1.4, 0.4])
    with pytest.raises(DomainError):
        dual_update(np.array([-1.0]), np.array([0.0]), 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50), st.one_of(st.floats(-5, -1e-6), st.just(0.0), st.floats(1e-6, 5))),
                min_size=1, max_size=8),
       st.floats(0.01, 10))
def test_dual_update_direction(pairs, step):
    mu = np.array([a for a, _ in pairs])
    slack = np.array([b for _, b in pairs])
    new = dual_update(mu, slack, step)
    assert np.all(new >= 0)
    assert np.all(new[slack < 0] > mu[slack < 0])
    assert np.all(new[slack > 0] <= mu[slack > 0])


def test_dual_trajectory_matches_repeated_updates():
    rng = np.random.default_rng(4)
    slacks = rng.normal(size=(6, 3))
    traj = dual_trajectory(np.array([0.5, 0.0, 2.0]), slacks, 1.5)
    mu = np.array([0.5, 0.0, 2.0])
    assert np.array_equal(traj[0], mu)
    for k in range(6):
        mu = dual_update(mu, slacks[k], 1.5)
        assert np.array_equal(traj[k + 1], mu)


def test_trace_csv_export(tmp_path):
    tr = EpisodeTrace(powers=np.ones((10, 2)), rates=np.full((10, 2), 0.5), duals=np.zeros((3, 2)),
                      window_rates=np.full((2, 2), 0.5), slacks=np.zeros((2, 2)), T0=5, f_min=0.5)
    tr.to_csv(tmp_path / "s.csv", tmp_path / "w.csv")
    steps = list(csv.reader(open(tmp_path / "s.csv")))
    wins = list(csv.reader(open(tmp_path / "w.csv")))
    assert steps[0] == ["t", "p0", "p1", "f0", "f1"] and len(steps) == 11
    assert wins[0] == ["k", "mu0", "mu1", "slack0", "slack1"] and len(wins) == 3
    assert float(steps[1][3]) == 0.5
