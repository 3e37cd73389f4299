import numpy as np
import pytest
from hypothesis import given, strategies as st

from algocollusion.games import (BertrandParams, Game, game_from_dict, grid_price, make_bertrand,
                                 make_contribution_game, make_general_pd, make_keyword_game,
                                 preserves_reward_order, pure_iesds, pure_nash)

import oracles


def test_contribution_payoffs():
    g = 1.8
    game = make_contribution_game(g)
    t = game.payoff_table
    assert t[0, 0, 0] == 2 * g and t[0, 0, 1] == g and t[0, 1, 0] == 2 + g and t[0, 1, 1] == 2
    np.testing.assert_array_equal(t[1], t[0].T)
    assert game.action_sets == (("C", "D"), ("C", "D"))


@pytest.mark.parametrize("g", [1.0, 2.0, 0.5, 2.5])
def test_contribution_rejects_out_of_range(g):
    with pytest.raises(ValueError):
        make_contribution_game(g)


@given(st.floats(1.001, 1.999))
def test_contribution_defect_is_strictly_dominant(g):
    game = make_contribution_game(g)
    assert pure_iesds(game) == ((1,), (1,))
    assert pure_nash(game) == [(1, 1)]


@given(st.floats(1.01, 1.99), st.floats(0.01, 0.99))
def test_general_pd_dominance(x, y):
    game = make_general_pd(x, y)
    assert pure_iesds(game) == ((1,), (1,))
    assert game.payoff_table[0, 0, 0] == 1.0 and game.payoff_table[0, 0, 1] == 0.0


def test_general_pd_validation():
    with pytest.raises(ValueError):
        make_general_pd(2.5, 0.5)
    with pytest.raises(ValueError):
        make_general_pd(1.5, 1.0)


def test_bertrand_simple_profits():
    game = make_bertrand("simple")
    t = game.payoff_table[0]
    # demand 3 - min price, zero cost, ties split
    assert t[0, 0] == pytest.approx(0.5 * 2.5 / 2)
    assert t[0, 1] == pytest.approx(0.5 * 2.5)
    assert t[1, 0] == 0.0
    assert t[1, 1] == pytest.approx(2 * 1 / 2)


def test_bertrand_grid_matches_weak_iesds_oracle():
    game = make_bertrand("grid")
    assert game.sizes == (100, 100)
    assert grid_price(0) == pytest.approx(0.01) and grid_price(99) == pytest.approx(10.0)
    expected = oracles.iesds(game.payoff_table[0], weak=True)
    survivors = pure_iesds(game, dominance="weak")
    assert list(survivors[0]) == expected == [20, 21]
    prices = [grid_price(k) for k in expected]
    np.testing.assert_allclose(prices, [2.0282, 2.1291], atol=1e-4)


def test_bertrand_strict_iesds_matches_oracle():
    game = make_bertrand("grid")
    assert list(pure_iesds(game)[0]) == oracles.iesds(game.payoff_table[0], weak=False)


def test_bertrand_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        make_bertrand(BertrandParams((1.0, 0.5), 0.0))


def test_keyword_expected_table_matches_sampler():
    game = make_keyword_game()
    rng = np.random.default_rng(0)
    draws = game.sampler(rng, 200_000)
    mean = draws.mean(axis=0)
    np.testing.assert_allclose(mean, game.payoff_table, atol=0.01)


def test_keyword_structure():
    game = make_keyword_game()
    labels = game.action_sets[0]
    assert len(labels) == 8
    full = labels.index("{a,m,b}")
    am, mb = labels.index("{a,m}"), labels.index("{m,b}")
    assert (full, full) in pure_nash(game)
    # market splitting: each advertiser drops the other's favourite keyword
    t = game.payoff_table
    assert t[0, am, mb] > t[0, full, full] and t[1, am, mb] > t[1, full, full]
    # entering every keyword weakly dominates
    assert pure_iesds(game, dominance="weak") == ((full,), (full,))


def test_game_from_dict_roundtrip():
    for spec in [{"family": "contribution", "params": {"g": 1.4}},
                 {"family": "general_pd", "params": {"x": 1.3, "y": 0.2}},
                 {"family": "bertrand", "params": {"model": "simple"}},
                 {"family": "keyword", "params": {}}]:
        game = game_from_dict(spec)
        again = game_from_dict(game.to_dict())
        np.testing.assert_array_equal(game.payoff_table, again.payoff_table)
    with pytest.raises(ValueError):
        game_from_dict({"family": "nope"})


def test_payoff_table_shape_checked():
    with pytest.raises(ValueError):
        Game(action_sets=(("a", "b"), ("a", "b")), payoff_table=np.zeros((2, 2, 3)))


def test_iesds_orders_agree_on_a_small_game():
    # one-at-a-time orders can only enlarge the strict survivors relative to nothing
    game = make_contribution_game(1.5)
    assert pure_iesds(game, order="all-orders") == pure_iesds(game)
    assert pure_iesds(game, order=[(0, 0)]) == ((1,), (1,))
    with pytest.raises(ValueError):
        pure_iesds(game, order=[(0, 1)])


@given(st.floats(1.05, 1.95), st.floats(0.0, 0.3))
def test_reward_order_kept_under_small_exploration(g, eps):
    # D beats C against every epsilon-greedy opponent for any eps in [0, 1]
    assert preserves_reward_order(make_contribution_game(g), eps)
