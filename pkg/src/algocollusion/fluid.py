"""Fluid limits of reinforcer profiles as piecewise vector fields.

The state is the stacked estimate vector, agent-major and action-minor. A
domain is labelled by the greedy profile: each agent's label is the strict
argmax of that agent's block. Inside a domain the policies are constant, so
the expected update is an affine map for Q-learning and a smooth map for
other separable rules.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .games import Game
from .reinforcer import ReinforcerSpec, policy_egreedy
from .simulator import _Loop, DivergenceError

__all__ = [
    "PiecewiseField",
    "PiecewiseAffineField",
    "SmoothPiecewiseField",
    "SymmetricReduction",
    "ContinuityDomain",
    "build_field",
    "verify_field_monte_carlo",
    "simulate_scaled_process",
    "ScaledPath",
    "sup_distance_to_flow",
    "BoundaryPointError",
]


class BoundaryPointError(ValueError):
    """The point has a tied argmax, so its domain is not determined."""


@dataclass(frozen=True)
class ContinuityDomain:
    label: tuple[int, ...]
    sizes: tuple[int, ...]

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        off = 0
        for a, d in zip(self.label, self.sizes):
            blk = theta[off:off + d]
            if not np.all(np.delete(blk, a) < blk[a]):
                return False
            off += d
        return True


class PiecewiseField:
    """Base class: a field defined by one smooth piece per greedy profile."""

    def __init__(self, sizes: Sequence[int]):
        self.sizes = tuple(int(d) for d in sizes)
        self.offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))
        self.dim = int(sum(self.sizes))

    @property
    def n_agents(self) -> int:
        return len(self.sizes)

    def block(self, theta, i):
        return np.asarray(theta)[self.offsets[i]:self.offsets[i] + self.sizes[i]]

    def index(self, i: int, a: int) -> int:
        return self.offsets[i] + a

    def labels(self):
        return itertools.product(*(range(d) for d in self.sizes))

    def label_of(self, theta, strict: bool = True):
        """Greedy profile at ``theta``; ``None`` on a tie when ``strict``."""
        out = []
        for i in range(self.n_agents):
            blk = self.block(theta, i)
            top = np.flatnonzero(blk == blk.max())
            if top.size > 1 and strict:
                return None
            out.append(int(top[0]))
        return tuple(out)

    def domain(self, label) -> ContinuityDomain:
        return ContinuityDomain(tuple(label), self.sizes)

    def eval_piece(self, label, theta) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, theta, label=None) -> np.ndarray:
        if label is None:
            label = self.label_of(theta)
            if label is None:
                raise BoundaryPointError("point lies on a switching surface")
        return self.eval_piece(tuple(label), np.asarray(theta, dtype=float))

    @property
    def is_affine(self) -> bool:
        return False


class PiecewiseAffineField(PiecewiseField):
    """Fluid field of Q-learning agents; each piece is ``A theta + b``.

    Row ``(i, a)`` of the piece with label ``l`` reads
    ``rate_ia * (E_ia + gamma_i * theta_{i, l_i} - theta_ia)`` where ``E_ia``
    is the expected reward of action ``a`` against the opponents' policies and
    ``rate_ia`` is ``alpha_ia`` times the play probability (asynchronous) or
    ``alpha_ia`` alone (synchronous).
    """

    def __init__(self, game: Game, specs: Sequence[ReinforcerSpec]):
        super().__init__(game.sizes)
        self.game = game
        self.specs = list(specs)
        self._cache: dict = {}

    @property
    def is_affine(self) -> bool:
        return True

    def _policies(self, label):
        return [policy_egreedy(np.eye(d)[a], s.epsilon) for d, a, s in zip(self.sizes, label, self.specs)]

    def _terms(self, label):
        """Per-row rate, expected reward and gamma for a domain (cached)."""
        label = tuple(label)
        hit = self._cache.get(label)
        if hit is not None:
            return hit
        pols = self._policies(label)
        rate = np.zeros(self.dim)
        reward = np.zeros(self.dim)
        gam = np.zeros(self.dim)
        for i, s in enumerate(self.specs):
            d = self.sizes[i]
            sl = slice(self.offsets[i], self.offsets[i] + d)
            alpha = s.alpha_vector(d)
            rate[sl] = alpha if s.is_sync else alpha * pols[i]
            reward[sl] = self.game.action_values(i, pols)
            gam[sl] = s.gamma
        self._cache[label] = (rate, reward, gam)
        return self._cache[label]

    def piece(self, label):
        """Matrix form ``(A, b)`` of the piece with this label."""
        rate, reward, gam = self._terms(label)
        A = np.zeros((self.dim, self.dim))
        for i in range(self.n_agents):
            lead = self.index(i, label[i])
            for a in range(self.sizes[i]):
                r = self.index(i, a)
                A[r, r] -= rate[r]
                A[r, lead] += rate[r] * gam[r]
        return A, rate * reward

    def eval_piece(self, label, theta):
        rate, reward, gam = self._terms(label)
        lead = np.repeat(np.array([theta[self.index(i, a)] for i, a in enumerate(label)]), self.sizes)
        return rate * (reward + gam * lead - theta)

    def to_dict(self, labels=None) -> dict:
        labels = list(self.labels()) if labels is None else labels
        pieces = []
        for lab in labels:
            A, b = self.piece(lab)
            pieces.append({"label": list(lab), "A": A.tolist(), "b": b.tolist()})
        return {"sizes": list(self.sizes), "pieces": pieces}

    def to_json(self, path, labels=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(labels), fh)


class SmoothPiecewiseField(PiecewiseField):
    """Piecewise field from an arbitrary ``fn(label, theta) -> vector``."""

    def __init__(self, sizes, fn: Callable):
        super().__init__(sizes)
        self.fn = fn

    def eval_piece(self, label, theta):
        return np.asarray(self.fn(tuple(label), theta), dtype=float)


class SeparableField(PiecewiseField):
    """Fluid field of custom separable reinforcers: ``rate_a (U(theta_a, E_a) + V(theta))``."""

    def __init__(self, game: Game, specs):
        super().__init__(game.sizes)
        self.game, self.specs = game, list(specs)
        self._aff = PiecewiseAffineField(game, specs)

    def eval_piece(self, label, theta):
        rate, reward, _ = self._aff._terms(label)
        out = np.zeros(self.dim)
        for i, s in enumerate(self.specs):
            U, V = s.terms()
            blk = self.block(theta, i)
            common = V(blk)
            sl = slice(self.offsets[i], self.offsets[i] + self.sizes[i])
            r = rate[sl]
            if s.update_family == "separable_custom" and s.rate is not None and not s.is_sync:
                pol = policy_egreedy(np.eye(self.sizes[i])[label[i]], s.epsilon)
                r = s.alpha_vector(self.sizes[i]) * np.asarray(s.rate(blk, pol))
            out[sl] = r * np.array([U(blk[a], reward[self.offsets[i] + a]) + common
                                    for a in range(self.sizes[i])])
        return out


class SymmetricReduction(PiecewiseField):
    """Restriction of a symmetric two-player field to the subspace where both
    agents hold the same estimates; the state is one agent's block."""

    def __init__(self, full: PiecewiseField):
        if full.n_agents != 2 or full.sizes[0] != full.sizes[1]:
            raise ValueError("symmetric reduction needs two agents with equal action sets")
        super().__init__((full.sizes[0],))
        self.full = full

    @property
    def is_affine(self) -> bool:
        return self.full.is_affine

    def eval_piece(self, label, theta):
        a = label[0]
        return self.full.eval_piece((a, a), np.concatenate([theta, theta]))[:self.sizes[0]]

    def piece(self, label):
        A, b = self.full.piece((label[0], label[0]))
        d = self.sizes[0]
        return A[:d, :d] + A[:d, d:], b[:d].copy()


def build_field(game: Game, specs: Sequence[ReinforcerSpec]) -> PiecewiseField:
    """Fluid field of ``specs`` playing ``game``.

    Q-learning profiles give a :class:`PiecewiseAffineField`; any custom
    separable rule gives a :class:`SeparableField`.
    """
    if game.payoff_table is None:
        raise ValueError("the fluid field needs exact expected payoffs")
    if len(specs) != game.n_players:
        raise ValueError(f"{len(specs)} specs for {game.n_players} players")
    if any(s.update_family == "separable_custom" for s in specs):
        return SeparableField(game, specs)
    return PiecewiseAffineField(game, specs)


def verify_field_monte_carlo(field: PiecewiseField, game: Game, specs, point, samples: int = 100_000,
                             seed: int = 0) -> dict:
    """Compare the field at an interior point with the sample mean of one-step updates.

    Returns ``max_deviation``, ``max_z`` (deviation over standard error, with
    zero-variance components counted only if they deviate) and the vectors.
    """
    point = np.asarray(point, dtype=float)
    label = field.label_of(point)
    if label is None:
        raise BoundaryPointError("point lies on a switching surface")
    rng = np.random.default_rng(seed)
    n = game.n_players
    acts = np.empty((samples, n), dtype=np.int64)
    for i, s in enumerate(specs):
        p = policy_egreedy(field.block(point, i), s.epsilon)
        acts[:, i] = rng.choice(game.sizes[i], size=samples, p=p)
    if game.sampler is not None:
        tables = np.concatenate([game.sampler(rng, min(20_000, samples - k))
                                 for k in range(0, samples, 20_000)])
    else:
        tables = None
    steps = np.zeros((samples, field.dim))
    rows = np.arange(samples)
    for i, s in enumerate(specs):
        blk = field.block(point, i)
        d = game.sizes[i]
        alpha = s.alpha_vector(d)
        U, V = s.terms()
        common = V(blk)

        def reward(own):
            prof = acts.copy()
            prof[:, i] = own
            idx = (i, *prof.T)
            if tables is None:
                return game.payoff_table[idx]
            return tables[(rows, *idx)]

        custom = s.update_family == "separable_custom"
        for a in range(d):
            col = field.index(i, a)
            r = reward(np.full(samples, a) if s.is_sync else acts[:, i])
            if custom:
                val = alpha[a] * (np.array([U(blk[a], x) for x in r]) + common)
            else:
                val = alpha[a] * (r + s.gamma * blk.max() - blk[a])
            steps[:, col] = val if s.is_sync else np.where(acts[:, i] == a, val, 0.0)
    constant = np.all(steps == steps[0], axis=0)
    mean = np.where(constant, steps[0], steps.mean(axis=0))
    se = np.where(constant, 0.0, steps.std(axis=0, ddof=1) / np.sqrt(samples))
    exact = field(point, label)
    dev = np.abs(mean - exact)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    return {"label": label, "field": exact, "mean": mean, "standard_error": se,
            "deviation": dev, "max_deviation": float(dev.max()), "max_z": float(z.max())}


# ---------------------------------------------------------------------------
# scaled jump process

@dataclass
class ScaledPath:
    times: np.ndarray
    """Jump times, with 0 prepended."""
    states: np.ndarray
    """State after each jump, shape (jumps + 1, dim)."""
    n: int
    horizon: float
    start_label: tuple | None
    exit_time: float | None
    """First jump time at which the path leaves its starting domain, else ``None``."""


def simulate_scaled_process(game: Game, specs, n: int, horizon: float, seed: int,
                            start=None, field: PiecewiseField | None = None) -> ScaledPath:
    """Pure-jump process with rate-``n`` exponential clock and jumps scaled by ``1/n``.

    Jump ``k`` applies the discrete update of iteration ``k`` with the same
    per-agent streams as :func:`run_episode`, so ``n=1`` reproduces the
    discrete iterates exactly.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if start is not None:
        specs = [s.with_(init=tuple(float(v) for v in np.asarray(x))) for s, x in zip(specs, start)]
    probe = _Loop(game, specs, 0, 0, 0, seed)
    clock = probe.streams[game.n_players + 1]
    times = [0.0]
    t = 0.0
    block = max(16, int(2 * n * horizon) + 16)
    while True:
        gaps = clock.exponential(1.0 / n, size=block)
        arr = t + np.cumsum(gaps)
        inside = arr[arr <= horizon]
        times.extend(inside.tolist())
        if inside.size < block:
            break
        t = float(arr[-1])
    n_jumps = len(times) - 1
    loop = _Loop(game, specs, n_jumps, n_jumps, 1, seed, step_scale=1.0 / n)
    loop.advance(n_jumps)
    sizes = loop.sizes
    states = np.concatenate([loop.trace[:loop.trace_pos, i, :sizes[i]] for i in range(game.n_players)], axis=1)
    field = field or PiecewiseField(game.sizes)
    lab0 = field.label_of(states[0])
    exit_time = None
    if lab0 is not None:
        inside = np.ones(states.shape[0], dtype=bool)
        for i, a in enumerate(lab0):
            blk = states[:, field.offsets[i]:field.offsets[i] + field.sizes[i]]
            others = np.delete(blk, a, axis=1)
            if others.shape[1]:
                inside &= blk[:, a] > others.max(axis=1)
        out = np.flatnonzero(~inside)
        if out.size:
            exit_time = times[out[0]]
    return ScaledPath(np.asarray(times), states, n, horizon, lab0, exit_time)


def sup_distance_to_flow(field: PiecewiseField, path: ScaledPath, rtol: float = 1e-10) -> dict:
    """Sup distance between a scaled path and the flow of its starting piece.

    The comparison stops at the path's first domain exit (``truncated``).
    Both the post-jump state and the pre-jump state are compared, since the
    path is piecewise constant between arrivals.
    """
    label = path.start_label
    if label is None:
        raise BoundaryPointError("path starts on a switching surface")
    end = path.exit_time if path.exit_time is not None else path.horizon
    sol = solve_ivp(lambda t, y: field.eval_piece(label, y), (0.0, max(end, 1e-12)), path.states[0],
                    rtol=rtol, atol=1e-12, dense_output=True, method="DOP853")
    keep = path.times <= end
    ts = path.times[keep]
    xs = path.states[keep]
    flow = sol.sol(ts).T
    post = np.linalg.norm(xs - flow, axis=1)
    pre = np.linalg.norm(xs[:-1] - flow[1:], axis=1) if ts.size > 1 else np.zeros(0)
    tail = np.linalg.norm(xs[-1] - sol.sol(end)) if ts.size else 0.0
    sup = float(max(post.max(initial=0.0), pre.max(initial=0.0), tail))
    return {"sup_distance": sup, "horizon_used": float(end), "truncated": path.exit_time is not None}
