import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from algocollusion.reinforcer import (AgentState, ReinforcerSpec, check_separable, initial_theta,
                                      policy_egreedy, q_update_async, q_update_sync,
                                      relative_learning_rate, separable_update)

finite = st.floats(-50, 50, allow_nan=False)
thetas = arrays(float, st.integers(1, 6), elements=finite)


@given(thetas, st.floats(0, 1))
def test_egreedy_is_a_distribution(theta, eps):
    p = policy_egreedy(theta, eps)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= eps / theta.size - 1e-15)
    top = theta == theta.max()
    # greedy actions share the exploitation mass equally
    assert np.allclose(p[top], p[top][0])


def test_egreedy_values():
    np.testing.assert_allclose(policy_egreedy([1.0, 3.0], 0.1), [0.05, 0.95])
    np.testing.assert_allclose(policy_egreedy([2.0, 2.0], 0.1), [0.5, 0.5])
    with pytest.raises(ValueError):
        policy_egreedy([], 0.1)
    with pytest.raises(ValueError):
        policy_egreedy([1.0], 1.5)


def test_async_update_touches_only_played_action():
    spec = ReinforcerSpec(alpha=0.1, gamma=0.9)
    s = AgentState(np.array([1.0, 4.0]))
    new = q_update_async(s, 0, 2.0, spec)
    assert new[1] == 4.0
    assert new[0] == pytest.approx(1.0 + 0.1 * (2.0 + 0.9 * 4.0 - 1.0))
    with pytest.raises(IndexError):
        q_update_async(s, 2, 1.0, spec)
    with pytest.raises(ValueError):
        q_update_async(s, 0, np.nan, spec)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), st.floats(0.0, 0.99),
       st.floats(0.0, 0.99))
def test_sync_update_formula(theta, r, alpha, gamma):
    spec = ReinforcerSpec(update_family="q_sync", alpha=alpha, gamma=gamma)
    new = q_update_sync(AgentState(theta), r, spec)
    np.testing.assert_allclose(new, theta + alpha * (r + gamma * theta.max() - theta), atol=1e-12)


@given(arrays(float, 2, elements=finite), st.floats(-10, 10), st.floats(0.0, 0.99))
def test_separable_q_terms_reproduce_q_learning(theta, r, alpha):
    gamma = 0.9
    spec = ReinforcerSpec(update_family="separable_custom", alpha=alpha, gamma=gamma,
                          U=lambda th, rew: rew - th, V=lambda th: gamma * np.max(th))
    got = separable_update(AgentState(theta), r, spec, action=1)
    want = q_update_async(AgentState(theta), 1, r, ReinforcerSpec(alpha=alpha, gamma=gamma))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        ReinforcerSpec(alpha=1.0)
    with pytest.raises(ValueError):
        ReinforcerSpec(gamma=1.0)
    with pytest.raises(ValueError):
        ReinforcerSpec(epsilon=-0.1)
    with pytest.raises(ValueError):
        ReinforcerSpec(update_family="sarsa")
    with pytest.raises(ValueError):
        ReinforcerSpec(update_family="separable_custom")


def test_check_separable_rejects_wrong_monotonicity():
    check_separable(lambda th, r: r - th)
    with pytest.raises(ValueError):
        check_separable(lambda th, r: th - r)


def test_initial_theta_rules():
    spec = ReinforcerSpec(gamma=0.9)
    np.testing.assert_allclose(initial_theta(spec, 2, 3.6), [37.0, 37.0])
    fixed = ReinforcerSpec(init=(1.0, 2.0))
    np.testing.assert_array_equal(initial_theta(fixed, 2, 3.6), [1.0, 2.0])
    with pytest.raises(ValueError):
        initial_theta(fixed, 3, 3.6)
    rnd = ReinforcerSpec(init="random", init_range=(3.0, 6.0))
    draw = initial_theta(rnd, 1000, 1.0, np.random.default_rng(0))
    assert draw.min() >= 3.0 and draw.max() <= 6.0
    with pytest.raises(ValueError):
        initial_theta(rnd, 2, 1.0)
    default = ReinforcerSpec(init="random", gamma=0.5)
    draw = initial_theta(default, 1000, 2.0, np.random.default_rng(0), min_payoff=1.0)
    assert draw.min() >= 2.0 and draw.max() <= 4.0


def test_spec_dict_roundtrip():
    for spec in [ReinforcerSpec(), ReinforcerSpec(update_family="q_sync", alpha=(0.1, 0.2)),
                 ReinforcerSpec(init="random", init_range=(3.0, 6.0)), ReinforcerSpec(init=(1.0, 2.0))]:
        assert ReinforcerSpec.from_dict(spec.to_dict()) == spec


def test_relative_learning_rate():
    sync = ReinforcerSpec(update_family="q_sync", alpha=0.1)
    np.testing.assert_allclose(relative_learning_rate(sync, [5.0, 1.0]), [0.5, 0.5])
    asyn = ReinforcerSpec(alpha=0.1, epsilon=0.2)
    np.testing.assert_allclose(relative_learning_rate(asyn, [5.0, 1.0]), [0.9, 0.1])
