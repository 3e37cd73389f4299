"""Finite mechanisms, feedback policies and the two-slot VCG example.

Types and outcomes are referred to by index. A feedback policy for agent
``i`` is a partition of the opponents' type profiles; it is *valid* when the
agent's outcome class, as a function of its own report, is constant on every
cell, so the agent can recompute every counterfactual from the cell alone.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "FiniteMechanism",
    "OutcomeQuotient",
    "FeedbackPolicy",
    "outcome_quotient",
    "is_strategy_proof",
    "menu",
    "menu_function",
    "make_policy",
    "full_revelation",
    "canonical_max_policy",
    "menu_set_policy",
    "compare_menu_partitions",
    "privacy_compare",
    "lattice_meet_join",
    "set_partitions",
    "brute_force_max_policy",
    "truthful_maximizes_menu",
    "VCGResult",
    "vcg_two_slot",
    "vcg_payoff",
    "counterfactual_reconstruct",
    "to_tenths",
]


@dataclass(frozen=True)
class FiniteMechanism:
    type_spaces: tuple
    """Per agent, a tuple of type labels."""
    outcomes: tuple
    f: np.ndarray
    """Outcome index for every type profile, shaped by the type-space sizes."""
    utilities: tuple
    """Per agent, an array ``u[x, type]``."""

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.int64)
        sizes = tuple(len(t) for t in self.type_spaces)
        if f.shape != sizes:
            raise ValueError(f"outcome map has shape {f.shape}, expected {sizes}")
        if f.size and (f.min() < 0 or f.max() >= len(self.outcomes)):
            raise ValueError("outcome map refers to unknown outcomes")
        us = tuple(np.asarray(u, dtype=float) for u in self.utilities)
        if len(us) != len(sizes):
            raise ValueError("need one utility table per agent")
        for i, u in enumerate(us):
            if u.shape != (len(self.outcomes), sizes[i]):
                raise ValueError(f"utility table {i} has shape {u.shape}")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "utilities", us)

    @classmethod
    def from_functions(cls, type_spaces, outcomes, f: Callable, u: Callable) -> "FiniteMechanism":
        """Build from ``f(labels) -> outcome label`` and ``u(i, outcome, type) -> float``."""
        type_spaces = tuple(tuple(t) for t in type_spaces)
        outcomes = tuple(outcomes)
        pos = {x: k for k, x in enumerate(outcomes)}
        sizes = tuple(len(t) for t in type_spaces)
        table = np.empty(sizes, dtype=np.int64)
        for prof in itertools.product(*(range(d) for d in sizes)):
            table[prof] = pos[f(tuple(type_spaces[i][k] for i, k in enumerate(prof)))]
        utils = []
        for i, ts in enumerate(type_spaces):
            utils.append(np.array([[u(i, x, lam) for lam in ts] for x in outcomes], dtype=float))
        return cls(type_spaces, outcomes, table, tuple(utils))

    @property
    def n_agents(self) -> int:
        return len(self.type_spaces)

    @property
    def sizes(self) -> tuple:
        return self.f.shape

    def opponent_profiles(self, i: int) -> list:
        return list(itertools.product(*(range(d) for j, d in enumerate(self.sizes) if j != i)))

    def outcome(self, i: int, own: int, opp: tuple) -> int:
        prof = list(opp)
        prof.insert(i, own)
        return int(self.f[tuple(prof)])

    def to_dict(self) -> dict:
        return {"type_spaces": [list(map(str, t)) for t in self.type_spaces],
                "outcomes": list(map(str, self.outcomes)), "f": self.f.tolist(),
                "utilities": [u.tolist() for u in self.utilities]}


# ---------------------------------------------------------------------------
# outcome classes and menus

@dataclass(frozen=True)
class OutcomeQuotient:
    agent: int
    classes: tuple
    """Tuple of tuples of outcome indices."""
    class_of: tuple
    """Class id of every outcome."""


def outcome_quotient(mech: FiniteMechanism, i: int) -> OutcomeQuotient:
    """Group outcomes that agent ``i`` values identically under every type."""
    u = mech.utilities[i]
    ids: dict = {}
    class_of = []
    for x in range(u.shape[0]):
        key = tuple(u[x])
        class_of.append(ids.setdefault(key, len(ids)))
    classes = tuple(tuple(x for x in range(u.shape[0]) if class_of[x] == c) for c in range(len(ids)))
    return OutcomeQuotient(i, classes, tuple(class_of))


def is_strategy_proof(mech: FiniteMechanism):
    """``(True, None)`` or ``(False, witness)`` with the first profitable misreport."""
    for i in range(mech.n_agents):
        u = mech.utilities[i]
        for opp in mech.opponent_profiles(i):
            for lam in range(mech.sizes[i]):
                truth = u[mech.outcome(i, lam, opp), lam]
                for lie in range(mech.sizes[i]):
                    gain = u[mech.outcome(i, lie, opp), lam] - truth
                    if gain > 0:
                        return False, {"agent": i, "type": lam, "report": lie, "opponents": opp,
                                       "gain": float(gain)}
    return True, None


def menu_function(mech: FiniteMechanism, i: int, opp: tuple, quotient: OutcomeQuotient | None = None) -> tuple:
    """Outcome class reached by every own report, in report order."""
    q = quotient if quotient is not None else outcome_quotient(mech, i)
    return tuple(q.class_of[mech.outcome(i, lam, tuple(opp))] for lam in range(mech.sizes[i]))


def menu(mech: FiniteMechanism, i: int, opp: tuple, quotient: OutcomeQuotient | None = None) -> frozenset:
    """Set of outcome classes agent ``i`` could enforce against ``opp``."""
    return frozenset(menu_function(mech, i, opp, quotient))


def truthful_maximizes_menu(mech: FiniteMechanism) -> bool:
    """Every truthful outcome is a best element of the agent's menu."""
    for i in range(mech.n_agents):
        u = mech.utilities[i]
        for opp in mech.opponent_profiles(i):
            reach = [mech.outcome(i, lam, opp) for lam in range(mech.sizes[i])]
            for lam in range(mech.sizes[i]):
                if u[reach[lam], lam] < max(u[x, lam] for x in reach):
                    return False
    return True


# ---------------------------------------------------------------------------
# feedback policies

def _normalize(cells, ground) -> tuple:
    cells = [frozenset(c) for c in cells if c]
    seen = set()
    for c in cells:
        if seen & c:
            raise ValueError("cells overlap")
        seen |= c
    if seen != set(ground):
        raise ValueError("cells do not cover the opponent profiles")
    return tuple(sorted(cells, key=lambda c: min(c)))


@dataclass(frozen=True)
class FeedbackPolicy:
    agent: int
    cells: tuple
    """Tuple of frozensets of opponent profiles."""
    factor_map: dict | None = field(default=None, compare=False, hash=False)
    """``(own type, cell index) -> outcome class``; ``None`` when invalid."""

    @property
    def valid(self) -> bool:
        return self.factor_map is not None

    @property
    def ground(self) -> frozenset:
        return frozenset().union(*self.cells)

    def cell_of(self, opp) -> int:
        for k, c in enumerate(self.cells):
            if tuple(opp) in c:
                return k
        raise KeyError(opp)

    def to_dict(self) -> dict:
        return {"agent": self.agent, "valid": self.valid,
                "cells": [sorted(list(map(list, c))) for c in self.cells]}


def make_policy(mech: FiniteMechanism, i: int, cells: Iterable) -> FeedbackPolicy:
    """Partition of opponent profiles plus its factor map when one exists."""
    ground = mech.opponent_profiles(i)
    cells = _normalize([{tuple(p) for p in c} for c in cells], ground)
    q = outcome_quotient(mech, i)
    g = {}
    for k, c in enumerate(cells):
        fns = {menu_function(mech, i, opp, q) for opp in c}
        if len(fns) != 1:
            return FeedbackPolicy(i, cells, None)
        fn = fns.pop()
        for lam in range(mech.sizes[i]):
            g[(lam, k)] = fn[lam]
    return FeedbackPolicy(i, cells, g)


def full_revelation(mech: FiniteMechanism, i: int) -> FeedbackPolicy:
    return make_policy(mech, i, [{p} for p in mech.opponent_profiles(i)])


def canonical_max_policy(mech: FiniteMechanism, i: int) -> FeedbackPolicy:
    """Group opponent profiles by the full menu function (report -> outcome class)."""
    q = outcome_quotient(mech, i)
    groups: dict = {}
    for opp in mech.opponent_profiles(i):
        groups.setdefault(menu_function(mech, i, opp, q), set()).add(opp)
    return make_policy(mech, i, groups.values())


def menu_set_policy(mech: FiniteMechanism, i: int) -> FeedbackPolicy:
    """Group opponent profiles by the menu as a set; may fail to be valid."""
    q = outcome_quotient(mech, i)
    groups: dict = {}
    for opp in mech.opponent_profiles(i):
        groups.setdefault(menu(mech, i, opp, q), set()).add(opp)
    return make_policy(mech, i, groups.values())


def compare_menu_partitions(mech: FiniteMechanism, i: int) -> dict:
    """Where grouping by menu sets differs from grouping by menu functions."""
    a, b = canonical_max_policy(mech, i), menu_set_policy(mech, i)
    return {"same": a.cells == b.cells, "set_partition_valid": b.valid,
            "relation": privacy_compare(b, a)}


def _coarser_or_equal(p_cells, q_cells) -> bool:
    """Every cell of ``q`` sits inside one cell of ``p``."""
    return all(any(c <= d for d in p_cells) for c in q_cells)


def privacy_compare(p: FeedbackPolicy, q: FeedbackPolicy) -> str:
    if p.agent != q.agent or p.ground != q.ground:
        raise ValueError("policies partition different sets")
    ge, le = _coarser_or_equal(p.cells, q.cells), _coarser_or_equal(q.cells, p.cells)
    if ge and le:
        return "equal"
    if ge:
        return "more_private"
    if le:
        return "less_private"
    return "incomparable"


def _meet_cells(a, b):
    return [c & d for c in a for d in b if c & d]


def _join_cells(a, b):
    # connected components of "shares a cell in a or in b"
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in list(a) + list(b):
        items = list(c)
        for x in items:
            parent.setdefault(x, x)
        for x in items[1:]:
            ra, rb = find(items[0]), find(x)
            if ra != rb:
                parent[rb] = ra
    groups: dict = {}
    for x in parent:
        groups.setdefault(find(x), set()).add(x)
    return list(groups.values())


def lattice_meet_join(p: FeedbackPolicy, q: FeedbackPolicy, mech: FiniteMechanism | None = None):
    """``(meet, join)``: the coarsest common refinement and the finest common coarsening.

    With ``mech`` both are rebuilt as policies of that mechanism. If the raw
    join were invalid it is replaced by its meet with the canonical maximal
    policy, the largest valid partition below it.
    """
    if p.agent != q.agent or p.ground != q.ground:
        raise ValueError("policies partition different sets")
    meet_c, join_c = _meet_cells(p.cells, q.cells), _join_cells(p.cells, q.cells)
    if mech is None:
        return (FeedbackPolicy(p.agent, _normalize(meet_c, p.ground)),
                FeedbackPolicy(p.agent, _normalize(join_c, p.ground)))
    meet = make_policy(mech, p.agent, meet_c)
    join = make_policy(mech, p.agent, join_c)
    if p.valid and q.valid and not join.valid:
        top = canonical_max_policy(mech, p.agent)
        join = make_policy(mech, p.agent, _meet_cells(join.cells, top.cells))
    return meet, join


def set_partitions(items: Sequence) -> Iterable[list]:
    """All partitions of ``items`` (restricted-growth enumeration)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def brute_force_max_policy(mech: FiniteMechanism, i: int) -> list:
    """Every valid partition with no strictly more private valid partition."""
    valid = []
    for part in set_partitions(mech.opponent_profiles(i)):
        pol = make_policy(mech, i, part)
        if pol.valid:
            valid.append(pol)
    return [p for p in valid
            if not any(privacy_compare(q, p) == "more_private" for q in valid)]


# ---------------------------------------------------------------------------
# two-slot VCG search auction

CLICKS = (100, 80)


def to_tenths(v) -> int:
    """Grid value in {0, 0.1, ..., 10} as an exact integer number of tenths."""
    t = round(float(v) * 10)
    if abs(t - float(v) * 10) > 1e-6 or not 0 <= t <= 100:
        raise ValueError(f"{v} is not on the 0.1 grid in [0, 10]")
    return int(t)


@dataclass
class VCGResult:
    ranking: tuple
    """Agents ordered by bid, ties toward the smaller index."""
    slots: tuple
    """(slot-1 winner, slot-2 winner)."""
    payments_tenths: tuple
    """Per agent, payment in tenths of a value unit."""
    feedback: tuple
    """Per agent ``(low, high, low_wins_tie, high_wins_tie)``: the second and
    first highest opposing bids in tenths, and whether each of those bidders
    would beat this agent on an equal bid."""

    @property
    def payments(self) -> tuple:
        return tuple(p / 10 for p in self.payments_tenths)


def _rank(bids_t):
    return tuple(sorted(range(len(bids_t)), key=lambda k: (-bids_t[k], k)))


def vcg_two_slot(bids, tenths: bool = False) -> VCGResult:
    """Two ad slots with 100 and 80 clicks; slot winners pay for the traffic
    they displace: slot 2 pays ``80 v3``, slot 1 pays ``80 v3 + 20 v2``."""
    b = [int(x) for x in bids] if tenths else [to_tenths(x) for x in bids]
    if len(b) < 3:
        raise ValueError("the two-slot auction needs at least three bidders")
    order = _rank(b)
    first, second, third = order[0], order[1], order[2]
    v2, v3 = b[second], b[third]
    pay = [0] * len(b)
    pay[second] = CLICKS[1] * v3
    pay[first] = CLICKS[1] * v3 + (CLICKS[0] - CLICKS[1]) * v2
    fb = []
    for k in range(len(b)):
        others = [j for j in order if j != k]
        hi, lo = others[0], others[1]
        fb.append((b[lo], b[hi], lo < k, hi < k))
    return VCGResult(order, (first, second), tuple(pay), tuple(fb))


def vcg_payoff(values, bids, agent: int, tenths: bool = False) -> int:
    """Agent's payoff in tenths from a full run of the auction."""
    v = int(values[agent]) if tenths else to_tenths(values[agent])
    res = vcg_two_slot(bids, tenths=tenths)
    if res.slots[0] == agent:
        return CLICKS[0] * v - res.payments_tenths[agent]
    if res.slots[1] == agent:
        return CLICKS[1] * v - res.payments_tenths[agent]
    return 0


def counterfactual_reconstruct(agent: int, feedback, value, deviation, tenths: bool = False) -> int:
    """Payoff in tenths of bidding ``deviation``, computed from feedback alone."""
    low, high, low_tie, high_tie = feedback
    v = int(value) if tenths else to_tenths(value)
    d = int(deviation) if tenths else to_tenths(deviation)

    def beats(price, wins_tie):
        return d > price or (d == price and not wins_tie)

    if beats(high, high_tie):
        return CLICKS[0] * v - (CLICKS[1] * low + (CLICKS[0] - CLICKS[1]) * high)
    if beats(low, low_tie):
        return CLICKS[1] * (v - low)
    return 0
