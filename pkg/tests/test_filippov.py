import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from algocollusion.filippov import (DegenerateBoundaryError, SwitchingSurface, agent_surface,
                                    classify_boundary, classify_codim2, in_convex_hull, integrate,
                                    mode_label, sliding_field)
from algocollusion.fluid import SmoothPiecewiseField, SymmetricReduction, build_field
from algocollusion.games import make_contribution_game
from algocollusion.reinforcer import ReinforcerSpec

import oracles


def constant_field(f_first, f_second):
    """Two-action, one-agent field: piece (0,) where theta_0 > theta_1."""
    f_first, f_second = np.asarray(f_first, float), np.asarray(f_second, float)
    return SmoothPiecewiseField((2,), lambda lab, th: f_first if lab == (0,) else f_second)


SURF = SwitchingSurface(np.array([1.0, -1.0]), 0.0, ((0,), (1,)))
vec = arrays(float, 2, elements=st.floats(-5, 5)).filter(lambda v: abs(v[0] - v[1]) > 1e-3)


def test_classification_kinds():
    p = np.array([1.0, 1.0])
    assert classify_boundary(constant_field([1, 0], [1, 0]), SURF, p).kind == "crossing"
    assert classify_boundary(constant_field([1, 0], [-1, 0]), SURF, p).kind == "repulsive"
    assert classify_boundary(constant_field([1, 1], [1, 0]), SURF, p).kind == "degenerate"
    rep = classify_boundary(constant_field([-1, 1], [2, 0]), SURF, p)
    assert rep.kind == "sliding"
    assert rep.local_time == pytest.approx(2 / 4)
    np.testing.assert_allclose(rep.sliding_field, [0.5, 0.5])


@given(vec, vec)
def test_sliding_combination_is_tangent(fa, fb):
    f = constant_field(fa, fb)
    rep = classify_boundary(f, SURF, [0.0, 0.0])
    sa, sb = fa[0] - fa[1], fb[0] - fb[1]
    if sa < 0 < sb:
        assert rep.kind == "sliding"
        assert 0 < rep.local_time < 1
        assert abs(SURF.normal @ rep.sliding_field) < 1e-9
    elif sa * sb > 0:
        assert rep.kind == "crossing"
    else:
        assert rep.kind == "repulsive"
        with pytest.raises(DegenerateBoundaryError):
            sliding_field(f, SURF, [0.0, 0.0])


def test_point_must_lie_on_surface():
    with pytest.raises(ValueError):
        classify_boundary(constant_field([1, 0], [1, 0]), SURF, [1.0, 0.0])


def test_agent_surface():
    s = ReinforcerSpec()
    f = build_field(make_contribution_game(1.5), [s, s])
    surf = agent_surface(f, 1, (0, 0))
    np.testing.assert_array_equal(surf.normal, [0, 0, 1, -1])
    assert surf.adjacent == ((0, 0), (0, 1))


def test_smooth_flow_matches_exponential():
    f = SmoothPiecewiseField((2,), lambda lab, th: -th + np.array([3.0, 0.0]))
    traj = integrate(f, [5.0, 1.0], 4.0)
    want = np.array([3.0, 0.0]) + (np.array([5.0, 1.0]) - [3.0, 0.0]) * np.exp(-4.0)
    np.testing.assert_allclose(traj.final_state, want, rtol=1e-8)
    assert traj.t_final == pytest.approx(4.0)
    s = traj.sample([0.0, 2.0])
    np.testing.assert_allclose(s[1], [3.0 + 2 * np.exp(-2.0), np.exp(-2.0)], rtol=1e-8)


def test_crossing_then_settling():
    # move toward the tie, cross it, then relax to a point in the second piece
    f = SmoothPiecewiseField((2,), lambda lab, th: np.array([-1.0, 0.0]) if lab == (0,)
                             else np.array([2.0, 5.0]) - th)
    traj = integrate(f, [3.0, 2.0], 60.0)
    np.testing.assert_allclose(traj.final_state, [2.0, 5.0], atol=1e-6)
    assert any(e["kind"] == "hit" for e in traj.events)
    assert traj.final_mode == (1,)


@pytest.mark.parametrize("g,eps,gam", [(1.8, 0.1, 0.9), (1.5, 0.2, 0.5), (1.3, 0.05, 0.0)])
def test_pd_cooperative_pseudo_steady_state(g, eps, gam):
    s = ReinforcerSpec(alpha=0.5, gamma=gam, epsilon=eps)
    red = SymmetricReduction(build_field(make_contribution_game(g), [s, s]))
    (q, tau), = oracles.sliding_root(g, eps, gam)
    start = [q + 1.0, q - 0.5]
    traj = integrate(red, start, 4000.0)
    ss = traj.steady_state
    assert ss is not None and ss["pseudo"]
    np.testing.assert_allclose(ss["state"], [q, q], atol=1e-6)


@pytest.mark.parametrize("g,eps,gam", [(1.8, 0.1, 0.9), (1.5, 0.6, 0.5)])
def test_pd_defect_steady_state(g, eps, gam):
    s = ReinforcerSpec(alpha=0.5, gamma=gam, epsilon=eps)
    red = SymmetricReduction(build_field(make_contribution_game(g), [s, s]))
    AC, bC, AD, bD = oracles.pd_matrices(g, eps, gam)
    q_d = np.linalg.solve(AD, -bD)
    traj = integrate(red, q_d + np.array([-3.0, 2.0]), 4000.0)
    ss = traj.steady_state
    assert ss is not None and not ss["pseudo"]
    np.testing.assert_allclose(ss["state"], q_d, atol=1e-6)


def test_codim2_report_at_symmetric_point():
    s = ReinforcerSpec(alpha=0.5, gamma=0.9, epsilon=0.1)
    f = build_field(make_contribution_game(1.8), [s, s])
    (q, _), = oracles.sliding_root(1.8, 0.1, 0.9)
    rep = classify_codim2(f, np.full(4, q))
    assert isinstance(rep, dict) and rep


def test_mode_label_and_csv(tmp_path):
    assert mode_label(((0, 1), 1), ["C", "D"]) == "C~D,D"
    assert mode_label((0, 1)) == "0,1"
    f = SmoothPiecewiseField((2,), lambda lab, th: -th)
    traj = integrate(f, [2.0, 1.0], 1.0)
    traj.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,theta_0,theta_1,mode"


def test_in_convex_hull():
    vs = [[0, 0], [1, 0], [0, 1]]
    assert in_convex_hull([0.2, 0.2], vs)
    assert not in_convex_hull([1.0, 1.0], vs)
