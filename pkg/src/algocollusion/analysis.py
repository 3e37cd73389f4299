"""Closed forms and numerical diagnostics built on the fluid and Filippov layers.

Covers the prisoner's-dilemma steady states and their existence threshold,
the general-PD existence region, basins of attraction, the stationary
structure of the Bertrand models, a search for coupling learning rates that
sustain a pseudo-steady-state, dominance-learning checks and chaos
diagnostics for the asymmetric system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.optimize import brentq

from . import filippov
from .fluid import PiecewiseAffineField, PiecewiseField, SmoothPiecewiseField, SymmetricReduction, build_field
from .games import (Game, GeneralPDParams, make_bertrand, make_contribution_game, make_general_pd,
                    pure_iesds)
from .reinforcer import ReinforcerSpec, initial_theta
from .simulator import EpisodeConfig, detect_learning, run_episode

__all__ = [
    "PDSteadyStateReport",
    "RegionVerdict",
    "ChaosReport",
    "BasinMap",
    "BertrandReport",
    "CouplingWitness",
    "epsilon_threshold",
    "pd_steady_states",
    "pd_matrices",
    "sliding_scalar_field",
    "local_time_closed_form",
    "pd_region_general",
    "contribution_region_diagnostic",
    "pseudo_steady_state_search",
    "basins",
    "bertrand_structure",
    "find_coupling_rates",
    "coupling_field",
    "verify_dominance_learning",
    "chaos_diagnostics",
]


# ---------------------------------------------------------------------------
# prisoner's dilemma closed forms

def _check_pd(g, epsilon, gamma):
    if not 1.0 < g < 2.0:
        raise ValueError(f"g must lie in (1, 2), got {g}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")


def epsilon_threshold(g: float) -> float:
    """Exploration rate below which the cooperative pseudo-steady-state exists."""
    if not 1.0 < g < 2.0:
        raise ValueError(f"g must lie in (1, 2), got {g}")
    return 1.0 - math.sqrt((2.0 - g) / g)


def pd_matrices(g: float, epsilon: float, gamma: float, alpha: float = 1.0):
    """Symmetric-subspace pieces ``(A_C, b_C, A_D, b_D)`` of the contribution game.

    Hand-derived; the fluid module builds the same pieces from the game.
    """
    e = epsilon / 2.0
    A_C = alpha * np.array([[(1 - e) * (gamma - 1), 0.0], [gamma * e, -e]])
    A_D = alpha * np.array([[-e, gamma * e], [0.0, (1 - e) * (gamma - 1)]])
    b_C = alpha * np.array([(1 - e) * (2 - e) * g, e * (2 + g - g * e)])
    b_D = alpha * np.array([(1 + e) * e * g, (1 - e) * (2 + e * g)])
    return A_C, b_C, A_D, b_D


def sliding_scalar_field(Q: float, g: float, epsilon: float, gamma: float, alpha: float = 1.0) -> float:
    """Common rate of change of both estimates while sliding on the diagonal."""
    w = (gamma - 1.0) * Q
    num = 0.5 * epsilon * g * (2 - epsilon) * (g - 1) + (2 * g + w) * (2 + w)
    return alpha * num / (2.0 * (1 + g + w))


def local_time_closed_form(Q: float, g: float, epsilon: float, gamma: float) -> float:
    """Share of time on the cooperative side while sliding at diagonal value ``Q``."""
    num = epsilon ** 2 * g / 2 + epsilon - 2 - Q * (gamma - 1) * (1 - epsilon)
    return num / (2 * (epsilon - 1) * (1 + g + (gamma - 1) * Q))


@dataclass
class PDSteadyStateReport:
    g: float
    epsilon: float
    gamma: float
    q_eq_D: np.ndarray
    q_eq_C: np.ndarray | None
    epsilon_threshold: float
    tau_at_C: float | None
    exists_C: bool

    def to_dict(self) -> dict:
        return {"g": self.g, "epsilon": self.epsilon, "gamma": self.gamma,
                "q_eq_D": self.q_eq_D.tolist(),
                "q_eq_C": None if self.q_eq_C is None else self.q_eq_C.tolist(),
                "epsilon_threshold": self.epsilon_threshold, "tau_at_C": self.tau_at_C,
                "exists_C": self.exists_C}


def pd_steady_states(g: float, epsilon: float, gamma: float) -> PDSteadyStateReport:
    """Steady state in the defect region and, below the threshold, the
    cooperative pseudo-steady-state on the diagonal with its local time.

    The defect point is the exact root of the defect-region affine piece,
    ``(g (1 + eps/2) + gamma c, c)`` with ``c = (4 + eps g) / (2 (1 - gamma))``.
    """
    _check_pd(g, epsilon, gamma)
    c = (4.0 + epsilon * g) / (2.0 * (1.0 - gamma))
    q_d = np.array([g * (1.0 + epsilon / 2.0) + gamma * c, c])
    thr = epsilon_threshold(g)
    exists = epsilon < thr
    q_c = tau = None
    if exists:
        disc = (g - 1.0) * (g - 1.0 - epsilon * g + epsilon ** 2 * g / 2.0)
        y = (1.0 + g + math.sqrt(max(disc, 0.0))) / (1.0 - gamma)
        q_c = np.array([y, y])
        tau = local_time_closed_form(y, g, epsilon, gamma)
    return PDSteadyStateReport(g, epsilon, gamma, q_d, q_c, thr, tau, exists)


# ---------------------------------------------------------------------------
# general PD existence region

@dataclass
class RegionVerdict:
    params: tuple[float, float, float]
    inside: bool
    slacks: dict
    bounds: dict = dc_field(default_factory=dict)

    @property
    def margin(self) -> float:
        return min(self.slacks.values())


def _region_bounds(x, epsilon):
    e = epsilon
    s = 2 * e - e ** 2
    x_hi = (4 + 2 * e - e ** 2) / s - 4 * math.sqrt(1.0 / s) if s > 0 else -math.inf
    den = 4 - 2 * e + e ** 2
    inner = (e - 2) ** 2 * e ** 2 * (e ** 2 * (x - 2) - 2 * e * (x - 2) + 4 * (x - 1)) / den ** 4
    if inner < 0:
        y_hi = -math.inf
    else:
        y_hi = (-4 * math.sqrt(inner)
                + (16 - 4 * e ** 3 * (x - 1) + e ** 4 * (x - 1) - 8 * e * (x + 2) + 4 * e ** 2 * (1 + 2 * x))
                / den ** 2)
    return x_hi, y_hi


def pd_region_general(x: float, y: float, epsilon: float) -> RegionVerdict:
    """Existence test for the cooperative pseudo-steady-state of the PD with
    rewards ``R=1, S=0, T=x, P=y``. The bounds do not involve the discount."""
    if not (x > 1.0 and 0.0 <= y < 1.0):
        raise ValueError(f"need x > 1 and 0 <= y < 1 for a prisoner's dilemma, got x={x}, y={y}")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    x_hi, y_hi = _region_bounds(x, epsilon)
    slacks = {"x_low": x - 1.0, "x_high": x_hi - x, "y_low": y, "y_high": y_hi - y}
    inside = all(v >= 0 for v in slacks.values())
    return RegionVerdict((x, y, epsilon), inside, slacks, {"x_high": x_hi, "y_high": y_hi})


def pd_region_exact(x: float, y: float, epsilon: float) -> dict:
    """Existence of the cooperative pseudo-steady-state from the sliding-field
    numerator on the diagonal, keeping only roots where both sides point into
    the tie.

    On the diagonal every row reads ``rate (E - v)`` with ``v = (1 - gamma) Q``,
    so the answer does not depend on the discount. The closed-form bounds of
    :func:`pd_region_general` only require the numerator to have real roots
    and overstate the region by up to about 0.035 in ``y`` near ``x = 1``.
    """
    if not (x > 1.0 and 0.0 <= y < 1.0):
        raise ValueError(f"need x > 1 and 0 <= y < 1 for a prisoner's dilemma, got x={x}, y={y}")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    e = epsilon / 2
    P = np.polynomial.Polynomial
    v = P([0.0, 1.0])
    # expected rewards of C and D against an opponent that is greedy on C or D
    ec_c, ed_c = (1 - e) * 1.0 + e * 0.0, (1 - e) * x + e * y
    ec_d, ed_d = e * 1.0 + (1 - e) * 0.0, e * x + (1 - e) * y
    n_c = (1 - e) * (ec_c - v) - e * (ed_c - v)   # tie-normal component on the C side
    n_d = e * (ec_d - v) - (1 - e) * (ed_d - v)   # and on the D side
    num = n_d * (1 - e) * (ec_c - v) - n_c * e * (ec_d - v)
    values = []
    for r in num.roots():
        if abs(r.imag) > 1e-12:
            continue
        r = float(r.real)
        if n_c(r) < 0 < n_d(r):
            values.append({"v": r, "tau": float(n_d(r) / (n_d(r) - n_c(r)))})
    return {"inside": bool(values), "points": values}


def contribution_region_diagnostic(g: float, epsilon: float) -> dict:
    """Compare the contribution-game threshold with the general region after
    the affine normalization ``x = 2/g``, ``y = (2 - g)/g``. Diagnostic only."""
    x, y = 2.0 / g, (2.0 - g) / g
    verdict = pd_region_general(x, y, epsilon) if epsilon > 0 else None
    return {"x": x, "y": y, "threshold_exists": epsilon < epsilon_threshold(g),
            "region_inside": None if verdict is None else verdict.inside,
            "region_margin": None if verdict is None else verdict.margin}


def pseudo_steady_state_search(field2d: PiecewiseField, starts, horizon: float = 5000.0,
                               **kw) -> dict:
    """Integrate the symmetric-subspace field from each start and report whether
    any trajectory settles at a pseudo-steady-state on the tie."""
    found = []
    ends = []
    for s in starts:
        traj = filippov.integrate(field2d, s, horizon, **kw)
        ss = traj.steady_state
        ends.append({"start": list(map(float, s)), "final": traj.final_state.tolist(),
                     "steady": ss is not None, "pseudo": bool(ss and ss.get("pseudo"))})
        if ss is not None and ss.get("pseudo"):
            found.append(ss["state"])
    return {"exists": bool(found), "points": found, "runs": ends}


def _symmetric_field(game: Game, epsilon: float, gamma: float, alpha: float = 0.5):
    spec = ReinforcerSpec(alpha=alpha, gamma=gamma, epsilon=epsilon)
    return SymmetricReduction(build_field(game, [spec, spec]))


def default_symmetric_starts(r_min: float, r_max: float, gamma: float, n: int = 7):
    """Diagonal points plus points off each side, spanning the payoff bounds."""
    lo, hi = r_min / (1 - gamma), r_max / (1 - gamma)
    span = hi - lo
    out = []
    for v in np.linspace(lo + 0.05 * span, hi - 0.05 * span, n):
        out += [(v, v), (v + 0.1 * span, v), (v, v + 0.1 * span)]
    return out


# ---------------------------------------------------------------------------
# basins

@dataclass
class BasinMap:
    labels: np.ndarray
    """One small integer per grid point; see ``legend``."""
    legend: dict
    points: np.ndarray
    final_states: np.ndarray

    def to_json_dict(self) -> dict:
        return {"legend": self.legend, "shape": list(self.labels.shape),
                "labels": self.labels.ravel().tolist()}


def basins(field: PiecewiseField, grid_points, targets: dict, horizon: float = 5000.0,
           radius: float = 1e-3, **kw) -> BasinMap:
    """Label every start by the target it approaches within ``radius`` at the
    horizon; ``unresolved`` otherwise. ``targets`` maps names to points."""
    pts = np.asarray(grid_points, dtype=float)
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, pts.shape[-1])
    names = list(targets)
    legend = {k: name for k, name in enumerate(names)}
    legend[len(names)] = "unresolved"
    tvec = [np.asarray(targets[n], dtype=float) for n in names]
    labels = np.full(flat.shape[0], len(names), dtype=np.uint8)
    finals = np.empty_like(flat)
    for k, p in enumerate(flat):
        hit = [j for j, t in enumerate(tvec) if np.linalg.norm(p - t) <= radius]
        if hit:
            labels[k] = hit[0]
            finals[k] = p
            continue
        traj = filippov.integrate(field, p, horizon, **kw)
        end = traj.final_state
        finals[k] = end
        dist = [np.linalg.norm(end - t) for t in tvec]
        j = int(np.argmin(dist))
        if dist[j] <= radius:
            labels[k] = j
    return BasinMap(labels.reshape(shape), legend, pts, finals.reshape(pts.shape))


# ---------------------------------------------------------------------------
# Bertrand

@dataclass
class BertrandReport:
    model: str
    updating: str
    stationary: list
    """Each entry: ``label``, ``fixed`` (price -> value), ``free`` (prices left undetermined)."""
    attractor: tuple | None = None
    predicted_prices: tuple | None = None


def _stationary_sets(field2d: SymmetricReduction, prices):
    """Stationary points or sets of each symmetric piece with no discounting:
    rows with positive rate settle at their expected reward, rows with zero
    rate are free. Kept only if the result is consistent with the piece's
    greedy action."""
    out = []
    d = field2d.sizes[0]
    for a in range(d):
        A, b = field2d.piece((a,))
        rate = -np.diag(A)
        fixed = {}
        free = []
        for k in range(d):
            if rate[k] > 0:
                fixed[k] = b[k] / rate[k]
            else:
                free.append(k)
        if a in fixed and any(v > fixed[a] for k, v in fixed.items() if k != a):
            continue
        out.append({"label": prices[a], "greedy": a,
                    "fixed": {prices[k]: float(v) for k, v in fixed.items()},
                    "free": [prices[k] for k in free]})
    return out


def bertrand_structure(model: str = "simple", updating: str = "async", epsilon: float = 0.0,
                       gamma: float = 0.0) -> BertrandReport:
    """Stationary structure of the Bertrand models.

    ``simple`` (two prices) needs ``gamma = 0``; each greedy price gives a
    stationary point, or a set when the other price's estimate is never
    updated. ``grid`` with synchronous updating predicts the prices that
    survive iterated elimination of weakly dominated prices.
    """
    if updating not in ("async", "sync"):
        raise ValueError("updating must be 'async' or 'sync'")
    if model == "simple":
        if gamma != 0.0:
            raise ValueError("the simple-model closed forms assume gamma = 0")
        game = make_bertrand("simple")
        fam = "q_sync" if updating == "sync" else "q_async"
        spec = ReinforcerSpec(update_family=fam, alpha=0.5, gamma=0.0, epsilon=epsilon)
        red = SymmetricReduction(build_field(game, [spec, spec]))
        prices = [float(p) for p in game.params["price_grid"]]
        names = {0: "competitive", 1: "collusive"}
        stat = _stationary_sets(red, prices)
        for s in stat:
            s["name"] = names[s["greedy"]]
        attractor = None
        if updating == "sync" and len(stat) == 1 and not stat[0]["free"]:
            attractor = tuple(stat[0]["fixed"][p] for p in prices)
        return BertrandReport(model, updating, stat, attractor)
    if model == "grid":
        if updating != "sync":
            raise ValueError("the grid prediction covers synchronous updating only")
        game = make_bertrand("grid")
        surv = pure_iesds(game, dominance="weak")
        prices = tuple(sorted({round(game.params["price_grid"][a], 4) for a in surv[0]}))
        return BertrandReport(model, updating, [], None, prices)
    raise ValueError(f"unsupported Bertrand model {model!r}")


# ---------------------------------------------------------------------------
# coupling rates

@dataclass
class CouplingWitness:
    alpha_C: float
    alpha_D: float
    theta_star: float
    tau: float
    residuals: tuple[float, float]
    normal_components: tuple[float, float]
    aggregate_slack: float
    """``-(tau U(theta, r_CC) + (1 - tau) U(theta, r_DD))``; non-negative when the
    aggregate sliding condition holds."""
    boundary_kind: str = ""
    local_time: float | None = None
    sliding_norm: float | None = None


def _pd_rewards(game) -> dict:
    if isinstance(game, GeneralPDParams):
        return {"CC": 1.0, "CD": 0.0, "DC": game.x, "DD": game.y}
    if isinstance(game, dict):
        return dict(game)
    if isinstance(game, Game):
        t = game.payoff_table[0]
        return {"CC": t[0, 0], "CD": t[0, 1], "DC": t[1, 0], "DD": t[1, 1]}
    raise TypeError("expected GeneralPDParams, a reward dict or a 2x2 Game")


def _zero_of(U, r, lo=-1e3, hi=1e3):
    return brentq(lambda th: U(th, r), lo, hi, xtol=1e-14, rtol=1e-14)


def coupling_field(rewards: dict, alpha: float, U: Callable, V: Callable | None = None) -> SmoothPiecewiseField:
    """One agent's two estimates when the opponent mirrors its greedy action.

    The greedy action learns at rate ``alpha`` and the other at ``1 - alpha``.
    """
    V = V if V is not None else (lambda theta: 0.0)

    def fn(label, theta):
        common = V(theta)
        if label[0] == 0:
            return np.array([alpha * (U(theta[0], rewards["CC"]) + common),
                             (1 - alpha) * (U(theta[1], rewards["DC"]) + common)])
        return np.array([(1 - alpha) * (U(theta[0], rewards["CD"]) + common),
                         alpha * (U(theta[1], rewards["DD"]) + common)])
    return SmoothPiecewiseField((2,), fn)


def find_coupling_rates(game, U: Callable | None = None, taus=None, n_scan: int = 400,
                        classify: bool = True) -> list[CouplingWitness]:
    """Learning rates and tied estimates at which the coupled sliding field vanishes.

    For each local time ``tau`` the first equation fixes ``alpha`` as a
    function of ``theta``; the second is then a scalar equation in ``theta``
    solved by scanning and bisection over the region where
    ``U(., r_CC) >= 0 > U(., r_DD)``. Witnesses need ``alpha`` in
    ``[1/2, 1]``, both sides of the tie pointing into it, and
    ``tau U(theta, r_CC) + (1 - tau) U(theta, r_DD) <= 0``.
    """
    U = U if U is not None else (lambda th, r: r - th)
    r = _pd_rewards(game)
    taus = np.linspace(0.02, 0.98, 49) if taus is None else np.atleast_1d(taus)
    th_cc, th_dd = _zero_of(U, r["CC"]), _zero_of(U, r["DD"])
    lo, hi = min(th_cc, th_dd), max(th_cc, th_dd)
    out = []
    for tau in taus:
        tau = float(tau)

        def alpha_of(th):
            ucd, ucc = U(th, r["CD"]), U(th, r["CC"])
            den = (1 - tau) * ucd - tau * ucc
            return (1 - tau) * ucd / den if den != 0 else np.nan

        def h(th):
            a = alpha_of(th)
            return (1 - a) * tau * U(th, r["DC"]) + a * (1 - tau) * U(th, r["DD"])

        grid = np.linspace(lo, hi, n_scan)[1:-1]
        vals = np.array([h(t) for t in grid])
        for k in range(grid.size - 1):
            if not (np.isfinite(vals[k]) and np.isfinite(vals[k + 1])) or vals[k] * vals[k + 1] > 0:
                continue
            try:
                th = brentq(h, grid[k], grid[k + 1], xtol=1e-15, rtol=1e-15)
            except ValueError:
                continue
            a = alpha_of(th)
            if not 0.5 <= a <= 1.0:
                continue
            ucc, ucd, udc, udd = (U(th, r[k_]) for k_ in ("CC", "CD", "DC", "DD"))
            res = (a * tau * ucc + (1 - a) * (1 - tau) * ucd,
                   (1 - a) * tau * udc + a * (1 - tau) * udd)
            nC = a * ucc - (1 - a) * udc
            nD = (1 - a) * ucd - a * udd
            if not (nC < 0 < nD):
                continue
            agg = -(tau * ucc + (1 - tau) * udd)
            if agg < 0:
                continue
            w = CouplingWitness(a, a, float(th), tau, res, (nC, nD), agg)
            if classify:
                fld = coupling_field(r, a, U)
                surf = filippov.agent_surface(fld, 0, (0,), 0, 1)
                rep = filippov.classify_boundary(fld, surf, np.array([th, th]))
                w.boundary_kind = rep.kind
                if rep.kind == "sliding":
                    w.local_time = rep.local_time
                    w.sliding_norm = float(np.linalg.norm(rep.sliding_field))
            out.append(w)
    return out


# ---------------------------------------------------------------------------
# dominance

def _target_sets(game: Game):
    surv = pure_iesds(game, dominance="strict")
    if all(len(s) == 1 for s in surv):
        return surv, "strict"
    return pure_iesds(game, dominance="weak"), "weak"


def verify_dominance_learning(game: Game, specs: Sequence[ReinforcerSpec], mode: str = "fluid",
                              horizon: float = 2000.0, config: EpisodeConfig | None = None,
                              start=None) -> list[dict]:
    """Per agent: does the surviving (dominant) action end up and stay greedy?

    Fluid mode integrates the Filippov flow and inspects the last fifth of the
    time span; discrete mode runs one episode and inspects the trailing window.
    """
    targets, kind = _target_sets(game)
    n = game.n_players
    if mode == "fluid":
        fld = build_field(game, specs)
        if start is None:
            mx = float(np.max(game.payoff_table))
            start = np.concatenate([initial_theta(s, d, mx) for s, d in zip(specs, game.sizes)])
            # break the symmetric optimistic tie so the start sits inside a domain
            start = start + 1e-6 * np.concatenate([np.arange(d)[::-1] for d in game.sizes])
        traj = filippov.integrate(fld, start, horizon)
        ts = np.linspace(0.8 * traj.t_final, traj.t_final, 200)
        samples = traj.sample(ts)
        blocks = [samples[:, fld.offsets[i]:fld.offsets[i] + fld.sizes[i]] for i in range(n)]
    elif mode == "discrete":
        cfg = config if config is not None else EpisodeConfig()
        res = run_episode(game, specs, cfg)
        blocks = [res.agent_trace(i) for i in range(n)]
    else:
        raise ValueError("mode must be 'fluid' or 'discrete'")
    out = []
    for i in range(n):
        tgt = list(targets[i])
        blk = blocks[i]
        if len(tgt) == 1:
            verdict = detect_learning(blk, tgt[0]) if mode == "discrete" else (
                "learned" if np.all(blk[:, tgt[0]] >= blk.max(axis=1)) else "not_learned")
        else:
            tail = blk[-max(2, blk.shape[0] // 5):]
            ok = tail[:, tgt].max(axis=1) >= tail.max(axis=1)
            verdict = "learned" if bool(np.all(ok)) else "not_learned"
        out.append({"agent": i, "targets": tgt, "dominance": kind, "verdict": verdict,
                    "greedy": int(np.argmax(blk[-1]))})
    return out


# ---------------------------------------------------------------------------
# chaos

@dataclass
class ChaosReport:
    divergence_slope: float
    saturation_time: float
    occupancy: dict
    """``edges`` per axis, ``probabilities`` over cells (sums to 1) and
    ``origin`` for the origin-centred cell."""
    growth_orders: float
    truncated: bool
    times: np.ndarray = dc_field(repr=False, default=None)
    separation: np.ndarray = dc_field(repr=False, default=None)
    window: tuple = ()
    first_hit_time: float = math.nan

    def origin_fraction(self, half_width: float) -> float:
        d = self.occupancy["differences"]
        return float(np.mean(np.all(np.abs(d) <= half_width, axis=1)))


@njit(cache=True)
def _euler_affine(x0, As, bs, sizes, offsets, strides, h, n, rec, lo, hi):
    dim = x0.size
    out = np.empty((n // rec + 1, dim))
    x = x0.copy()
    out[0] = x
    k_out = 1
    for k in range(n):
        p = 0
        for i in range(sizes.size):
            best = 0
            for a in range(1, sizes[i]):
                if x[offsets[i] + a] > x[offsets[i] + best]:
                    best = a
            p += best * strides[i]
        x = x + h * (As[p] @ x + bs[p])
        for j in range(dim):
            if not (lo <= x[j] <= hi):
                return out[:k_out], True
        if (k + 1) % rec == 0:
            out[k_out] = x
            k_out += 1
    return out[:k_out], False


def _tabulate(field: PiecewiseAffineField):
    labels = list(field.labels())
    sizes = np.array(field.sizes, dtype=np.int64)
    strides = np.array([int(np.prod(sizes[j + 1:])) for j in range(sizes.size)], dtype=np.int64)
    As = np.zeros((len(labels), field.dim, field.dim))
    bs = np.zeros((len(labels), field.dim))
    for lab in labels:
        p = int(np.dot(lab, strides))
        As[p], bs[p] = field.piece(lab)
    return As, bs, sizes, np.array(field.offsets[:len(sizes)], dtype=np.int64), strides


def _trajectory(field, x0, horizon, method, step, box, record_dt):
    if method == "timestep":
        As, bs, sizes, offs, strides = _tabulate(field)
        n = int(round(horizon / step))
        rec = max(1, int(round(record_dt / step)))
        path, trunc = _euler_affine(np.asarray(x0, float), As, bs, sizes, offs, strides,
                                    step, n, rec, box[0], box[1])
        return np.arange(path.shape[0]) * rec * step, path, trunc
    if method == "filippov":
        traj = filippov.integrate(field, x0, horizon)
        ts = np.arange(0.0, traj.t_final + 1e-12, record_dt)
        path = traj.sample(ts)
        trunc = bool(np.any((path < box[0]) | (path > box[1])))
        return ts, path, trunc
    raise ValueError("method must be 'timestep' or 'filippov'")


def chaos_diagnostics(field: PiecewiseAffineField, init, perturbation: float = 1e-10,
                      horizon: float = 5000.0, method: str = "timestep", step: float = 0.01,
                      box: tuple | None = None, cell: float = 0.2, record_dt: float = 1.0,
                      burn_in: float = 0.0) -> ChaosReport:
    """Separation of a perturbed twin trajectory and time occupancy of the
    per-agent estimate gaps.

    ``timestep`` uses a fixed-step Euler scheme whose switching chatters
    across the ties like the discrete algorithm does; ``filippov`` uses the
    event-driven integrator. The growth slope is a least-squares fit of the
    log-separation between the first tie crossing and the point where the
    separation reaches 1% of the attractor diameter (or the horizon).
    """
    x0 = np.asarray(init, dtype=float)
    if field.n_agents != 2 or any(d != 2 for d in field.sizes):
        raise ValueError("chaos diagnostics cover two agents with two actions each")
    if box is None:
        g = field.game.payoff_table
        gam = max(s.gamma for s in field.specs)
        lo, hi = float(g.min()) / (1 - gam), float(g.max()) / (1 - gam)
        span = hi - lo
        box = (lo - 10 * span, hi + 10 * span)
    bump = np.zeros_like(x0)
    bump[0] = perturbation
    t, a, ta = _trajectory(field, x0, horizon, method, step, box, record_dt)
    _, b, tb = _trajectory(field, x0 + bump, horizon, method, step, box, record_dt)
    m = min(a.shape[0], b.shape[0])
    t, a, b = t[:m], a[:m], b[:m]
    sep = np.linalg.norm(a - b, axis=1)
    gaps = np.c_[a[:, 0] - a[:, 1], a[:, 2] - a[:, 3]]
    signs = np.sign(gaps)
    changed = np.flatnonzero(np.any(signs[1:] != signs[:1], axis=1))
    first_hit = float(t[changed[0] + 1]) if changed.size else math.nan
    i0 = changed[0] + 1 if changed.size else 0
    diam = float(np.max(np.ptp(a[i0:], axis=0))) if m > i0 + 1 else 0.0
    sat_level = 0.01 * diam
    above = np.flatnonzero(sep[i0:] >= sat_level) if diam > 0 else np.array([], int)
    i1 = i0 + int(above[0]) if above.size else m - 1
    sat_time = float(t[i1]) if above.size else math.nan
    logsep = np.log10(np.maximum(sep, 1e-300))
    sel = slice(i0, i1 + 1)
    ok = np.isfinite(logsep[sel]) & (sep[sel] > 0)
    if np.count_nonzero(ok) >= 2:
        slope = float(np.polyfit(t[sel][ok], np.log(sep[sel][ok]), 1)[0])
    else:
        slope = math.nan
    growth = float(logsep[i0:i1 + 1].max() - math.log10(perturbation)) if m > i0 else math.nan
    keep = t >= burn_in
    d = gaps[keep]
    edges = np.arange(-cell / 2 - cell * math.ceil(np.abs(d).max() / cell + 1),
                      cell * math.ceil(np.abs(d).max() / cell + 1) + cell, cell) if d.size else np.array([0.0])
    hist, ex, ey = np.histogram2d(d[:, 0], d[:, 1], bins=[edges, edges])
    prob = hist / hist.sum() if hist.sum() else hist
    origin = float(np.mean(np.all(np.abs(d) <= cell / 2, axis=1))) if d.size else math.nan
    occ = {"edges": ex, "probabilities": prob, "origin": origin, "differences": d, "cell": cell}
    return ChaosReport(slope, sat_time, occ, growth, bool(ta or tb), t, sep, (float(t[i0]), float(t[i1])),
                       first_hit)
