import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import long_form_rates
from sarrm.errors import DomainError, NumericError
from sarrm.rate import constraints, dbm_to_watts, ergodic_average, rates, rates_vjp, sinr, utility, \
    watts_to_dbm


def test_single_user_unit_snr():
    assert rates(np.array([[1.0]]), np.array([1.0]), 1.0)[0] == pytest.approx(1.0, abs=1e-12)


def test_two_user_hand_values():
    g = np.array([[4.0, 1.0], [1.0, 4.0]])
    f = rates(g, np.ones(2), 1.0)
    assert f == pytest.approx([math.log2(3.0)] * 2, abs=1e-12)
    assert f[0] == pytest.approx(1.585, abs=1e-3)


def test_zero_power_gives_zero_rate():
    g = np.array([[1.0, 0.3], [0.2, 1.0]])
    assert rates(g, np.array([0.0, 1.0]), 0.1)[0] == 0.0


def test_orientation_sender_row_receiver_column():
    # only transmitter 1 interferes at receiver 0 through gain[1, 0]
    g = np.array([[1.0, 0.0], [5.0, 1.0]])
    f = rates(g, np.ones(2), 1.0)
    assert f[0] == pytest.approx(math.log2(1 + 1 / 6))
    assert f[1] == pytest.approx(1.0)


def test_units():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(10.0) == pytest.approx(0.01)
    assert watts_to_dbm(dbm_to_watts(-104.0)) == pytest.approx(-104.0)


def test_errors():
    g = np.eye(2)
    with pytest.raises(DomainError):
        rates(g, np.ones(2), 0.0)
    with pytest.raises(NumericError, match=r"\(1,\)"):
        rates(g, np.array([1.0, np.nan]), 1.0)
    with pytest.raises(DomainError):
        constraints(np.ones(2), -0.1)
    with pytest.raises(DomainError):
        ergodic_average(np.empty((0, 3)))


def test_utility_and_constraints():
    x = np.array([0.3, 1.2])
    assert utility(x) == pytest.approx(1.5)
    assert constraints(x, 0.5) == pytest.approx([-0.2, 0.7])
    assert ergodic_average([[1.0, 2.0], [3.0, 4.0]]) == pytest.approx([2.0, 3.0])


def test_matches_long_form_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = int(rng.integers(1, 7))
        g = 10 ** rng.uniform(-12, -6, size=(m, m))
        p = rng.uniform(0, 0.01, size=m)
        noise = dbm_to_watts(-104)
        ref = long_form_rates(g.tolist(), p.tolist(), noise)
        got = rates(g, p, noise)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-15)


def test_batched_rates_equal_loop():
    rng = np.random.default_rng(1)
    g = rng.uniform(0.01, 1, size=(3, 4, 5, 5))
    p = rng.uniform(0, 1, size=(3, 4, 5))
    f = rates(g, p, 0.1)
    for a in range(3):
        for b in range(4):
            assert np.array_equal(f[a, b], rates(g[a, b], p[a, b], 0.1))


gains_st = st.integers(2, 5).flatmap(lambda m: st.tuples(
    st.lists(st.lists(st.floats(1e-3, 1e3), min_size=m, max_size=m), min_size=m, max_size=m),
    st.lists(st.floats(1e-3, 10.0), min_size=m, max_size=m),
    st.integers(0, m - 1),
))


@settings(max_examples=60, deadline=None)
@given(gains_st, st.floats(1.01, 10.0))
def test_own_power_increases_rate_and_hurts_others(case, factor):
    g, p, i = case
    g, p = np.array(g), np.array(p)
    base = rates(g, p, 0.5)
    q = p.copy()
    q[i] *= factor
    new = rates(g, q, 0.5)
    assert new[i] > base[i]
    others = np.arange(len(p)) != i
    assert np.all(new[others] <= base[others] + 1e-15)


@settings(max_examples=60, deadline=None)
@given(gains_st, st.floats(1e-3, 1e3))
def test_joint_scaling_invariance(case, c):
    g, p, _ = case
    g, p = np.array(g), np.array(p)
    assert np.allclose(rates(g, c * p, c * 0.5), rates(g, p, 0.5), rtol=1e-10)


def test_vjp_sign_pattern_and_finite_difference():
    rng = np.random.default_rng(3)
    m = 4
    g = rng.uniform(0.05, 1.0, size=(m, m))
    p = rng.uniform(0.1, 1.0, size=m)
    noise = 0.2
    jac = np.stack([rates_vjp(g, p, noise, np.eye(m)[i]) for i in range(m)])  # jac[i, j] = df_i/dp_j
    h = 1e-6
    for j in range(m):
        e = np.eye(m)[j] * h
        fd = (rates(g, p + e, noise) - rates(g, p - e, noise)) / (2 * h)
        assert np.allclose(jac[:, j], fd, rtol=1e-6, atol=1e-9)
    assert np.all(np.diag(jac) > 0)
    assert np.all(jac[~np.eye(m, dtype=bool)] < 0)


def test_sinr_matches_rates():
    g = np.array([[2.0, 0.5], [0.5, 2.0]])
    assert np.allclose(np.log2(1 + sinr(g, np.ones(2), 1.0)), rates(g, np.ones(2), 1.0))
