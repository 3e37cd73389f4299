import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from algocollusion.games import make_bertrand, make_contribution_game
from algocollusion.reinforcer import ReinforcerSpec
from algocollusion.simulator import (EpisodeConfig, agent_streams, detect_learning, run_episode,
                                     sweep, write_episodes_csv, write_trace_json)

import oracles


def _oracle_draws(seed, iters, eps):
    streams = agent_streams(seed, 2)
    u = np.stack([streams[i].random((iters, 3)) for i in range(2)], axis=1)
    return u[:, :, 0] < eps, np.minimum((u[:, :, 1] * 2).astype(int), 1)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.floats(1.05, 1.95), st.floats(0.0, 0.5))
def test_async_trajectory_matches_plain_loop(seed, g, eps):
    iters = 400
    init = np.random.default_rng(seed).uniform(20, 40, 4)
    specs = [ReinforcerSpec(alpha=0.05, gamma=0.9, epsilon=eps, init=tuple(init[2 * i:2 * i + 2]),
                            deterministic_ties=True) for i in range(2)]
    res = run_episode(make_contribution_game(g), specs, EpisodeConfig(iters, seed=seed, snapshot_stride=1))
    explore, rnd = _oracle_draws(seed, iters, eps)
    ref = oracles.q_learning_pd(g, eps, 0.05, 0.9, iters, init, explore, rnd)
    np.testing.assert_allclose(res.theta_trace, ref, rtol=0, atol=1e-10)


def test_custom_separable_path_matches_compiled_loop():
    game = make_contribution_game(1.6)
    q = ReinforcerSpec(alpha=0.1, gamma=0.8, epsilon=0.2)
    custom = ReinforcerSpec(update_family="separable_custom", alpha=0.1, gamma=0.8, epsilon=0.2,
                            U=lambda th, r: r - th, V=lambda th: 0.8 * np.max(th))
    cfg = EpisodeConfig(300, seed=5, snapshot_stride=1)
    a = run_episode(game, [q, q], cfg)
    b = run_episode(game, [custom, custom], cfg)
    np.testing.assert_allclose(a.theta_trace, b.theta_trace, atol=1e-10)


def test_seed_determinism():
    game = make_contribution_game(1.8)
    s = ReinforcerSpec()
    a = run_episode(game, [s, s], EpisodeConfig(5000, seed=3))
    b = run_episode(game, [s, s], EpisodeConfig(5000, seed=3))
    c = run_episode(game, [s, s], EpisodeConfig(5000, seed=4))
    np.testing.assert_array_equal(a.theta_trace, b.theta_trace)
    assert not np.array_equal(a.theta_trace, c.theta_trace)


def test_full_exploration_plays_uniformly():
    game = make_contribution_game(1.5)
    s = ReinforcerSpec(epsilon=1.0)
    res = run_episode(game, [s, s], EpisodeConfig(40_000, seed=0))
    freq = res.action_counts_full / 40_000
    np.testing.assert_allclose(freq, 0.25, atol=0.01)
    assert res.nash_fraction == pytest.approx(0.25, abs=0.01)


def test_random_init_uses_range_and_its_own_stream():
    game = make_contribution_game(1.5)
    s = ReinforcerSpec(init="random", init_range=(3.0, 6.0), epsilon=0.0)
    res = run_episode(game, [s, s], EpisodeConfig(10, seed=1, snapshot_stride=1))
    assert np.all((res.theta_trace[0] >= 3.0) & (res.theta_trace[0] <= 6.0))
    # the exploration/tie streams are the same as under a fixed init
    fixed = [ReinforcerSpec(init=tuple(res.theta_trace[0, i]), epsilon=0.0) for i in range(2)]
    again = run_episode(game, fixed, EpisodeConfig(10, seed=1, snapshot_stride=1))
    np.testing.assert_array_equal(res.theta_trace, again.theta_trace)


def test_sync_learns_dominant_action():
    game = make_contribution_game(1.8)
    s = ReinforcerSpec(update_family="q_sync", alpha=0.05, gamma=0.9, epsilon=0.1)
    res = run_episode(game, [s, s], EpisodeConfig(50_000, seed=2))
    assert res.learned_actions == [1, 1]
    assert res.modal_profile() == (1, 1)


def test_window_statistics():
    game = make_contribution_game(1.8)
    s = ReinforcerSpec()
    res = run_episode(game, [s, s], EpisodeConfig(10_000, seed=0, record_window=2000))
    assert res.action_counts.sum() == 2000
    assert res.action_counts_full.sum() == 10_000
    assert np.all((0 <= res.local_time) & (res.local_time <= 1))
    assert res.agent_trace(0).shape[1] == 2


def test_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(100, record_window=200)
    with pytest.raises(ValueError):
        run_episode(make_contribution_game(1.5), [ReinforcerSpec()], EpisodeConfig(10))


def test_detect_learning():
    trace = np.zeros((100, 2))
    trace[:, 1] = 1.0
    assert detect_learning(trace, 1) == "learned"
    assert detect_learning(trace, 0) != "learned"


def test_sweep_and_writers(tmp_path):
    s = ReinforcerSpec(alpha=0.05, gamma=0.9, epsilon=0.1)
    res = sweep("contribution", [{"g": 1.2}, {"g": 1.8}], 2, s, EpisodeConfig(5000, seed=0), jobs=1)
    assert [c["g"] for c in res.cells] == [1.2, 1.8]
    assert all(c["seeds"] == 2 for c in res.cells)
    assert len(res.episodes) == 4 and [r["seed"] for r in res.episodes] == [0, 1, 0, 1]
    write_episodes_csv(res.episodes, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("g,seed")
    ep = run_episode(make_bertrand("simple"), [s, s], EpisodeConfig(100, seed=0))
    write_trace_json(ep, tmp_path / "t.json")
    assert (tmp_path / "t.json").stat().st_size > 0
    with pytest.raises(ValueError):
        sweep("contribution", [], 1, s)
