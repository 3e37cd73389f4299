"""Finite normal-form games, the concrete game families, and pure-dominance tools.

A :class:`Game` stores the expected payoff of every pure profile as a dense
array of shape ``(n_players, |A_1|, ..., |A_N|)``. Games with random payoffs
additionally carry a sampler that draws realized payoff tables from an
explicit :class:`numpy.random.Generator`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Game",
    "ContributionGameParams",
    "GeneralPDParams",
    "BertrandParams",
    "KeywordAuctionParams",
    "make_contribution_game",
    "make_general_pd",
    "make_bertrand",
    "make_keyword_game",
    "pure_iesds",
    "dominates",
    "preserves_reward_order",
    "game_from_dict",
    "grid_price",
    "pure_nash",
]

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class Game:
    """A finite N-player normal-form game.

    ``payoff_table[i][a_1, ..., a_N]`` is player ``i``'s expected payoff. When
    ``sampler`` is set, ``sampler(rng, n)`` returns ``n`` realized tables of
    the same shape stacked along a leading axis.
    """

    action_sets: tuple[tuple[str, ...], ...]
    payoff_table: np.ndarray | None
    sampler: Sampler | None = None
    family: str = "custom"
    params: dict = field(default_factory=dict)
    kernel_payoff: dict | None = None
    """Compact description of the payoff noise for the compiled simulator."""

    def __post_init__(self):
        if not self.action_sets or any(len(a) == 0 for a in self.action_sets):
            raise ValueError("every player needs a non-empty finite action set")
        if self.payoff_table is None and self.sampler is None:
            raise ValueError("a game needs a payoff table or a payoff sampler")
        if self.payoff_table is not None:
            table = np.asarray(self.payoff_table, dtype=float)
            expected = (self.n_players, *self.sizes)
            if table.shape != expected:
                raise ValueError(f"payoff table has shape {table.shape}, expected {expected}")
            if not np.all(np.isfinite(table)):
                raise ValueError("payoffs must be finite")
            table.setflags(write=False)
            object.__setattr__(self, "payoff_table", table)

    @property
    def n_players(self) -> int:
        return len(self.action_sets)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.action_sets)

    @property
    def stochastic(self) -> bool:
        return self.sampler is not None

    @property
    def has_exact_expectation(self) -> bool:
        return self.payoff_table is not None

    def profiles(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(*(range(d) for d in self.sizes))

    def action_index(self, player: int, label: str) -> int:
        return self.action_sets[player].index(label)

    def payoff(self, profile: Sequence[int], rng: np.random.Generator | None = None) -> np.ndarray:
        """Per-player payoff of a pure profile; a fresh draw for stochastic games."""
        profile = tuple(int(a) for a in profile)
        if self.sampler is None:
            return self.payoff_table[(slice(None), *profile)].copy()
        if rng is None:
            raise ValueError("stochastic games need an explicit rng")
        return self.sampler(rng, 1)[(0, slice(None), *profile)]

    def expected_payoff_exact(self, profile: Sequence[int]) -> np.ndarray:
        if self.payoff_table is None:
            raise ValueError(f"game {self.family!r} has no closed-form expected payoffs")
        return self.payoff_table[(slice(None), *tuple(profile))].copy()

    def expected_payoffs(self, mixed: Sequence[np.ndarray]) -> np.ndarray:
        """Expected payoff of every player under independent mixed strategies."""
        return np.array([self.action_values(i, mixed).dot(mixed[i]) for i in range(self.n_players)])

    def action_values(self, player: int, mixed: Sequence[np.ndarray]) -> np.ndarray:
        """Expected payoff of each pure action of ``player`` against ``mixed`` opponents."""
        if self.payoff_table is None:
            raise ValueError(f"game {self.family!r} has no closed-form expected payoffs")
        t = self.payoff_table[player]
        # contract opponents from the last axis down so axis indices stay valid
        for j in reversed(range(self.n_players)):
            if j != player:
                t = np.tensordot(t, np.asarray(mixed[j], dtype=float), axes=([j], [0]))
        return np.asarray(t, dtype=float)

    def to_dict(self) -> dict:
        if self.family != "custom":
            return {"family": self.family, "params": dict(self.params)}
        return {
            "family": "custom",
            "actions": [list(a) for a in self.action_sets],
            "payoffs": self.payoff_table.tolist(),
        }


# ---------------------------------------------------------------------------
# families

@dataclass(frozen=True)
class ContributionGameParams:
    g: float


@dataclass(frozen=True)
class GeneralPDParams:
    x: float
    y: float


@dataclass(frozen=True)
class BertrandParams:
    price_grid: tuple[float, ...]
    marginal_cost: float
    demand_intercept: float | None = None
    """``None`` means unit demand served entirely by the cheapest firm."""

    @classmethod
    def simple(cls) -> "BertrandParams":
        return cls(price_grid=(0.5, 2.0), marginal_cost=0.0, demand_intercept=3.0)

    @classmethod
    def grid(cls, n_prices: int = 100, low: float = 0.01, high: float = 10.0,
             marginal_cost: float = 2.0) -> "BertrandParams":
        step = (high - low) / (n_prices - 1)
        return cls(price_grid=tuple(low + k * step for k in range(n_prices)),
                   marginal_cost=marginal_cost, demand_intercept=None)


@dataclass(frozen=True)
class KeywordAuctionParams:
    ctr: tuple[tuple[float, ...], tuple[float, ...]] = ((1.0, 0.6, 0.2), (0.2, 0.6, 1.0))
    value_low: float = 1.0
    value_high: float = 2.0
    reserve: float = 1.0
    keywords: tuple[str, ...] = ("a", "m", "b")


def _two_player(labels, rows_a, rows_b, family, params) -> Game:
    table = np.stack([np.asarray(rows_a, float), np.asarray(rows_b, float)])
    return Game(action_sets=(tuple(labels), tuple(labels)), payoff_table=table,
                family=family, params=params)


def make_contribution_game(g: float) -> Game:
    """Two players split a pool that multiplies contributions of 2 by ``g``."""
    if not 1.0 < g < 2.0:
        raise ValueError(f"growth factor g must lie in (1, 2), got {g}")
    own = [[2 * g, g], [2 + g, 2.0]]
    return _two_player(("C", "D"), own, np.transpose(own), "contribution", {"g": g})


def make_general_pd(x: float, y: float) -> Game:
    """Prisoner's dilemma normalized to R=1, S=0, T=x, P=y."""
    if not (1.0 < x < 2.0 and 0.0 < y < 1.0):
        raise ValueError(f"need 1 < x < 2 and 0 < y < 1, got x={x}, y={y}")
    own = [[1.0, 0.0], [x, y]]
    return _two_player(("C", "D"), own, np.transpose(own), "general_pd", {"x": x, "y": y})


def grid_price(k: int, n_prices: int = 100, low: float = 0.01, high: float = 10.0) -> float:
    return low + k * (high - low) / (n_prices - 1)


def make_bertrand(params: BertrandParams | str) -> Game:
    """Homogeneous-good duopoly over a finite price grid; ties split demand."""
    if isinstance(params, str):
        params = {"simple": BertrandParams.simple, "grid": BertrandParams.grid}[params]()
    prices = np.asarray(params.price_grid, dtype=float)
    if prices.size == 0:
        raise ValueError("price grid is empty")
    if np.any(np.diff(prices) <= 0):
        raise ValueError("price grid must be strictly increasing")
    own, opp = prices[:, None], prices[None, :]
    if params.demand_intercept is None:
        demand = np.ones_like(own * opp)
    else:
        demand = np.maximum(params.demand_intercept - np.minimum(own, opp), 0.0)
    # index comparison keeps tie detection exact on the grid
    k = np.arange(prices.size)
    share = np.where(k[:, None] < k[None, :], 1.0, np.where(k[:, None] == k[None, :], 0.5, 0.0))
    profit = (own - params.marginal_cost) * demand * share
    labels = tuple(f"{p:.4f}" for p in prices)
    model = "simple" if params == BertrandParams.simple() else (
        "grid" if params == BertrandParams.grid() else "custom")
    game_params = {"model": model, "price_grid": prices.tolist(),
                   "marginal_cost": params.marginal_cost,
                   "demand_intercept": params.demand_intercept}
    return _two_player(labels, profit, profit.T, "bertrand", game_params)


def _keyword_subsets(keywords: Sequence[str]) -> list[tuple[str, tuple[bool, ...]]]:
    out = []
    for mask in range(2 ** len(keywords)):
        bits = tuple(bool(mask >> j & 1) for j in range(len(keywords)))
        name = "{" + ",".join(k for k, b in zip(keywords, bits) if b) + "}"
        out.append((name, bits))
    return out


def make_keyword_game(params: KeywordAuctionParams | None = None) -> Game:
    """Two advertisers choose which keywords to enter; each keyword runs a
    second-price auction with a reserve, and bids equal fresh uniform values."""
    params = params or KeywordAuctionParams()
    ctr = np.asarray(params.ctr, dtype=float)
    n_kw = len(params.keywords)
    if ctr.shape != (2, n_kw) or np.any(ctr < 0):
        raise ValueError(f"ctr must be a non-negative 2x{n_kw} matrix")
    lo, hi, reserve = params.value_low, params.value_high, params.reserve
    if not lo < hi or reserve > lo:
        raise ValueError("need value_low < value_high and reserve <= value_low")
    subsets = _keyword_subsets(params.keywords)
    labels = tuple(name for name, _ in subsets)
    bids = np.array([bits for _, bits in subsets], dtype=bool)  # (8, n_kw)
    both = bids[:, None, :] & bids[None, :, :]                  # (a_A, a_B, kw)
    solo_a = bids[:, None, :] & ~bids[None, :, :]
    solo_b = ~bids[:, None, :] & bids[None, :, :]

    # E[(v_i - v_j)^+] for iid U[lo, hi] is (hi - lo)/6; a solo bidder pays the reserve
    contested = (hi - lo) / 6.0
    solo = (lo + hi) / 2.0 - reserve
    exp_a = (both * contested + solo_a * solo) @ ctr[0]
    exp_b = (both * contested + solo_b * solo) @ ctr[1]
    table = np.stack([exp_a, exp_b])

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.uniform(lo, hi, size=(n, 2, n_kw))
        gap = v[:, 0, :] - v[:, 1, :]  # ties (measure zero) go to A, who then earns 0 anyway
        win_a = np.maximum(gap, 0.0)[:, None, None, :]
        win_b = np.maximum(-gap, 0.0)[:, None, None, :]
        pa = (both * win_a + solo_a * (v[:, 0, None, None, :] - reserve)) @ ctr[0]
        pb = (both * win_b + solo_b * (v[:, 1, None, None, :] - reserve)) @ ctr[1]
        return np.stack([pa, pb], axis=1)

    game_params = {"ctr": ctr.tolist(), "value_low": lo, "value_high": hi,
                   "reserve": reserve, "keywords": list(params.keywords)}
    kernel = {"kind": "keyword", "ctr": ctr, "reserve": float(reserve),
              "bits": bids.astype(np.int64), "value_low": float(lo), "value_high": float(hi)}
    return Game(action_sets=(labels, labels), payoff_table=table, sampler=sampler,
                family="keyword", params=game_params, kernel_payoff=kernel)


def game_from_dict(spec: dict) -> Game:
    family = spec.get("family", "custom")
    p = spec.get("params", {})
    if family == "contribution":
        return make_contribution_game(p["g"])
    if family == "general_pd":
        return make_general_pd(p["x"], p["y"])
    if family == "bertrand":
        model = p.get("model", "simple")
        if model in ("simple", "grid") and "price_grid" not in p:
            return make_bertrand(model)
        if model in ("simple", "grid") and p.get("price_grid") is None:
            return make_bertrand(model)
        return make_bertrand(BertrandParams(tuple(p["price_grid"]), p["marginal_cost"],
                                            p.get("demand_intercept")))
    if family == "keyword":
        kw = {}
        if "ctr" in p:
            kw["ctr"] = tuple(tuple(r) for r in p["ctr"])
        for key in ("value_low", "value_high", "reserve"):
            if key in p:
                kw[key] = p[key]
        if "keywords" in p:
            kw["keywords"] = tuple(p["keywords"])
        return make_keyword_game(KeywordAuctionParams(**kw))
    if family == "custom":
        return Game(action_sets=tuple(tuple(a) for a in spec["actions"]),
                    payoff_table=np.asarray(spec["payoffs"], dtype=float))
    raise ValueError(f"unknown game family {family!r}")


# ---------------------------------------------------------------------------
# dominance

def _player_matrix(game: Game, player: int, alive: Sequence[Sequence[int]]) -> np.ndarray:
    """Payoffs of ``player`` restricted to surviving actions, own actions first."""
    t = game.payoff_table[player][np.ix_(*alive)]
    t = np.moveaxis(t, player, 0)
    return t.reshape(t.shape[0], -1)


def dominates(u_better: np.ndarray, u_worse: np.ndarray, strict: bool = True) -> bool:
    d = np.asarray(u_better) - np.asarray(u_worse)
    if strict:
        return bool(np.all(d > 0))
    return bool(np.all(d >= 0) and np.any(d > 0))


def _dominated(game: Game, alive, strict: bool) -> list[tuple[int, int]]:
    out = []
    for i in range(game.n_players):
        m = _player_matrix(game, i, alive)
        for a_pos, a in enumerate(alive[i]):
            if any(dominates(m[b_pos], m[a_pos], strict)
                   for b_pos in range(len(alive[i])) if b_pos != a_pos):
                out.append((i, a))
    return out


def pure_iesds(game: Game, order="simultaneous", dominance: str = "strict",
               max_states: int = 200_000) -> tuple[tuple[int, ...], ...]:
    """Iterated elimination of actions dominated by another pure action.

    ``order`` is ``"simultaneous"`` (delete everything dominated each round),
    ``"all-orders"`` (union of survivors over every one-at-a-time deletion
    sequence, i.e. the pure-rationalizable actions), or an explicit list of
    ``(player, action)`` deletions, each of which must be dominated when it is
    applied; elimination then continues simultaneously to the fixed point.
    ``dominance="weak"`` deletes weakly dominated actions instead.
    """
    if game.payoff_table is None:
        raise ValueError("dominance needs expected payoffs")
    if dominance not in ("strict", "weak"):
        raise ValueError("dominance must be 'strict' or 'weak'")
    strict = dominance == "strict"
    start = tuple(tuple(range(d)) for d in game.sizes)

    def remove(alive, dels):
        return tuple(tuple(a for a in alive[i] if (i, a) not in dels) for i in range(len(alive)))

    def run_simultaneous(alive):
        while True:
            dels = set(_dominated(game, alive, strict))
            if not dels:
                return alive
            alive = remove(alive, dels)

    if isinstance(order, str) and order == "simultaneous":
        return run_simultaneous(start)

    if isinstance(order, str) and order == "all-orders":
        survivors = [set() for _ in game.sizes]
        seen = set()
        stack = [start]
        while stack:
            alive = stack.pop()
            if alive in seen:
                continue
            seen.add(alive)
            if len(seen) > max_states:
                raise RuntimeError("too many elimination states; use a fixed order")
            dels = _dominated(game, alive, strict)
            if not dels:
                for i, acts in enumerate(alive):
                    survivors[i].update(acts)
                continue
            for d in dels:
                stack.append(remove(alive, {d}))
        return tuple(tuple(sorted(s)) for s in survivors)

    alive = start
    for i, a in order:
        if (i, a) not in _dominated(game, alive, strict):
            raise ValueError(f"action {a} of player {i} is not dominated at this step")
        alive = remove(alive, {(i, a)})
    return run_simultaneous(alive)


def pure_nash(game: Game) -> list[tuple[int, ...]]:
    """Pure-strategy Nash equilibria of the expected-payoff game."""
    t = game.payoff_table
    out = []
    for prof in game.profiles():
        ok = True
        for i in range(game.n_players):
            idx = list(prof)
            idx[i] = slice(None)
            if t[(i, *idx)].max() > t[(i, *prof)]:
                ok = False
                break
        if ok:
            out.append(prof)
    return out


def _egreedy(d: int, greedy: int, epsilon: float) -> np.ndarray:
    p = np.full(d, epsilon / d)
    p[greedy] += 1.0 - epsilon
    return p


def preserves_reward_order(game: Game, epsilon: float) -> bool:
    """Whether epsilon-greedy perturbation of every pure opponent profile keeps
    each player's strict payoff ranking of own actions.

    This is the order-preservation premise of the IESDS learning result; the
    function checks it for a given epsilon but does not derive the bound.
    """
    for i in range(game.n_players):
        opp_sizes = [d for j, d in enumerate(game.sizes) if j != i]
        for opp in itertools.product(*(range(d) for d in opp_sizes)):
            opp = list(opp)
            mixed = []
            for j, d in enumerate(game.sizes):
                mixed.append(np.ones(d) / d if j == i else _egreedy(d, opp.pop(0), epsilon))
            pure = [np.eye(d)[int(np.argmax(m))] if j != i else m for j, (d, m)
                    in enumerate(zip(game.sizes, mixed))]
            r_pure = game.action_values(i, pure)
            r_mix = game.action_values(i, mixed)
            gt = r_pure[:, None] > r_pure[None, :]
            if np.any(gt & ~(r_mix[:, None] > r_mix[None, :])):
                return False
    return True
