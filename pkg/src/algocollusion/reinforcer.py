"""Reinforcers: value estimates, update rules and epsilon-greedy policies.

Three update families are supported:

``q_async``
    Q-learning that updates only the entry of the action just played.
``q_sync``
    Q-learning that updates every entry with its counterfactual reward,
    holding the opponents' realized actions fixed.
``separable_custom``
    A user-supplied separable rule ``theta_a += rate_a * (U(theta_a, r_a) + V(theta))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ReinforcerSpec",
    "AgentState",
    "policy_egreedy",
    "q_update_async",
    "q_update_sync",
    "separable_update",
    "relative_learning_rate",
    "initial_theta",
    "check_separable",
    "q_learning_terms",
]

FAMILIES = ("q_async", "q_sync", "separable_custom")


def q_learning_terms(gamma: float):
    """The (U, V) pair that makes Q-learning separable."""
    def U(theta_a, r):
        return r - theta_a

    def V(theta):
        return gamma * np.max(theta)
    return U, V


@dataclass(frozen=True)
class ReinforcerSpec:
    update_family: str = "q_async"
    alpha: float | tuple[float, ...] = 0.05
    gamma: float = 0.9
    epsilon: float = 0.1
    init: str | tuple[float, ...] = "optimistic"
    U: Callable | None = field(default=None, compare=False)
    V: Callable | None = field(default=None, compare=False)
    rate: Callable | None = field(default=None, compare=False)
    """Optional per-action rate multiplier ``rate(theta, policy) -> vector``
    for custom families; defaults to the policy probabilities (asynchronous)."""
    synchronous: bool = False
    deterministic_ties: bool = False
    """Debug-only: break greedy ties toward the lowest index."""
    validate_box: tuple[float, float] = (-10.0, 10.0)
    init_range: tuple[float, float] | None = None
    """Range of ``init="random"``; ``None`` means [min payoff, max payoff] / (1 - gamma)."""

    def __post_init__(self):
        if self.update_family not in FAMILIES:
            raise ValueError(f"unknown update family {self.update_family!r}")
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if np.any(a < 0) or np.any(a >= 1) or not np.all(np.isfinite(a)):
            raise ValueError("learning rates must lie in [0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.update_family == "separable_custom":
            if self.U is None:
                raise ValueError("separable_custom needs a U function")
            check_separable(self.U, self.V, box=self.validate_box)

    @property
    def is_sync(self) -> bool:
        return self.update_family == "q_sync" or (
            self.update_family == "separable_custom" and self.synchronous)

    def alpha_vector(self, d: int) -> np.ndarray:
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if a.size == 1:
            return np.full(d, float(a[0]))
        if a.size != d:
            raise ValueError(f"alpha has {a.size} entries for {d} actions")
        return a.copy()

    def terms(self):
        if self.update_family == "separable_custom":
            V = self.V if self.V is not None else (lambda theta: 0.0)
            return self.U, V
        return q_learning_terms(self.gamma)

    def with_(self, **kw) -> "ReinforcerSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        if self.update_family == "separable_custom":
            raise ValueError("custom separable specs hold callables and cannot be serialized")
        alpha = self.alpha if np.isscalar(self.alpha) else list(self.alpha)
        init = self.init if isinstance(self.init, str) else list(self.init)
        out = {"update_family": self.update_family, "alpha": alpha, "gamma": self.gamma,
               "epsilon": self.epsilon, "init": init,
               "deterministic_ties": self.deterministic_ties}
        if self.init_range is not None:
            out["init_range"] = list(self.init_range)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ReinforcerSpec":
        d = dict(d)
        if isinstance(d.get("alpha"), list):
            d["alpha"] = tuple(d["alpha"])
        if isinstance(d.get("init"), list):
            d["init"] = tuple(float(v) for v in d["init"])
        if isinstance(d.get("init_range"), list):
            d["init_range"] = tuple(float(v) for v in d["init_range"])
        return cls(**d)


@dataclass
class AgentState:
    theta: np.ndarray
    last_action: int = -1
    rng_stream: np.random.Generator | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        if self.theta.ndim != 1 or self.theta.size == 0:
            raise ValueError("theta must be a non-empty vector")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")


def initial_theta(spec: ReinforcerSpec, d: int, max_payoff: float, rng: np.random.Generator | None = None,
                  min_payoff: float = 0.0) -> np.ndarray:
    """Initial estimates.

    "optimistic" sits one unit above max payoff / (1 - gamma); "random" draws
    each entry uniformly from ``spec.init_range`` using ``rng``.
    """
    if isinstance(spec.init, str):
        if spec.init == "optimistic":
            return np.full(d, max_payoff / (1.0 - spec.gamma) + 1.0)
        if spec.init == "random":
            if rng is None:
                raise ValueError("random initialization needs a generator")
            lo, hi = spec.init_range if spec.init_range is not None else (
                min_payoff / (1.0 - spec.gamma), max_payoff / (1.0 - spec.gamma))
            return rng.uniform(lo, hi, size=d)
        raise ValueError(f"unknown init rule {spec.init!r}")
    theta = np.asarray(spec.init, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"init vector has shape {theta.shape}, expected ({d},)")
    return theta.copy()


def policy_egreedy(theta, epsilon: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.size == 0:
        raise ValueError("theta is empty")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    d = theta.size
    top = theta == theta.max()
    return epsilon / d + (1.0 - epsilon) * top / top.sum()


def q_update_async(state: AgentState, action: int, reward: float, spec: ReinforcerSpec) -> np.ndarray:
    theta = state.theta
    if not 0 <= action < theta.size:
        raise IndexError(f"action {action} out of range")
    if not np.isfinite(reward):
        raise ValueError("reward must be finite")
    alpha = spec.alpha_vector(theta.size)[action]
    new = theta.copy()
    new[action] = theta[action] + alpha * (reward + spec.gamma * theta.max() - theta[action])
    return new


def q_update_sync(state: AgentState, counterfactual_rewards, spec: ReinforcerSpec) -> np.ndarray:
    theta = state.theta
    r = np.asarray(counterfactual_rewards, dtype=float)
    if r.shape != theta.shape:
        raise ValueError(f"expected {theta.size} counterfactual rewards, got {r.size}")
    alpha = spec.alpha_vector(theta.size)
    return theta + alpha * (r + spec.gamma * theta.max() - theta)


def separable_update(state: AgentState, rewards, spec: ReinforcerSpec, action: int | None = None):
    """One step of a custom separable rule; ``rewards`` is a scalar for the
    played action (asynchronous) or a full counterfactual vector."""
    theta = state.theta
    U, V = spec.terms()
    alpha = spec.alpha_vector(theta.size)
    common = V(theta)
    new = theta.copy()
    if spec.is_sync:
        r = np.asarray(rewards, dtype=float)
        for a in range(theta.size):
            new[a] = theta[a] + alpha[a] * (U(theta[a], r[a]) + common)
    else:
        new[action] = theta[action] + alpha[action] * (U(theta[action], float(rewards)) + common)
    return new


def relative_learning_rate(spec: ReinforcerSpec, theta) -> np.ndarray:
    """Each action's effective learning rate as a share of the agent's total."""
    theta = np.asarray(theta, dtype=float)
    alpha = spec.alpha_vector(theta.size)
    if spec.is_sync:
        rates = alpha
    elif spec.update_family == "separable_custom" and spec.rate is not None:
        rates = alpha * np.asarray(spec.rate(theta, policy_egreedy(theta, spec.epsilon)))
    else:
        rates = alpha * policy_egreedy(theta, spec.epsilon)
    total = rates.sum()
    if total <= 0:
        raise ValueError("all effective learning rates are zero")
    return rates / total


def check_separable(U, V=None, box=(-10.0, 10.0), n_points: int = 25, h: float = 1e-5,
                    d: int = 2) -> None:
    """Finite-difference check that U rises in the reward, falls in the own
    estimate, and that the common term cannot offset the own-estimate effect.

    Raises ``ValueError`` with the offending point.
    """
    lo, hi = box
    grid = np.linspace(lo, hi, n_points)
    for th in grid:
        for r in grid:
            du_dr = (U(th, r + h) - U(th, r - h)) / (2 * h)
            du_dth = (U(th + h, r) - U(th - h, r)) / (2 * h)
            if not du_dr > 0:
                raise ValueError(f"U is not increasing in the reward at theta={th}, r={r}")
            if not du_dth < 0:
                raise ValueError(f"U is not decreasing in theta at theta={th}, r={r}")
    if V is None:
        return
    rng = np.random.default_rng(0)
    for _ in range(n_points):
        theta = rng.uniform(lo, hi, size=d)
        r = rng.uniform(lo, hi)
        for a in range(d):
            e = np.zeros(d)
            e[a] = h
            dv = (V(theta + e) - V(theta - e)) / (2 * h)
            du = (U(theta[a] + h, r) - U(theta[a] - h, r)) / (2 * h)
            if not dv < -du:
                raise ValueError(f"common term dominates own-estimate effect at theta={theta}")
