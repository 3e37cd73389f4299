"""Discrete-time repeated play of a game by independent reinforcers."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernel
from .games import Game, game_from_dict, pure_nash
from .reinforcer import (AgentState, ReinforcerSpec, initial_theta, separable_update)

__all__ = [
    "EpisodeConfig",
    "EpisodeResult",
    "DivergenceError",
    "run_episode",
    "detect_learning",
    "sweep",
    "SweepResult",
    "write_episodes_csv",
    "write_trace_json",
    "agent_streams",
]

CHUNK = 16384


class DivergenceError(RuntimeError):
    """Raised when an estimate becomes non-finite."""

    def __init__(self, step, agent_states):
        super().__init__(f"non-finite estimate at iteration {step}")
        self.step = step
        self.agent_states = agent_states


@dataclass(frozen=True)
class EpisodeConfig:
    iterations: int = 100_000
    seed: int = 0
    record_window: int | None = None
    """Trailing window length; ``None`` means the last 20% of iterations."""
    snapshot_stride: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.record_window is not None and not 0 <= self.record_window <= self.iterations:
            raise ValueError("record_window must lie in [0, iterations]")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be positive")

    @property
    def window(self) -> int:
        if self.record_window is None:
            return self.iterations // 5
        return self.record_window


@dataclass
class EpisodeResult:
    theta_trace: np.ndarray
    """Stride-sampled estimates, shape (snapshots, agents, max actions); row 0 is the start."""
    trace_steps: np.ndarray
    action_counts: np.ndarray
    """Per-profile play counts over the trailing window, shaped like the game."""
    action_counts_full: np.ndarray
    learned_actions: list
    """Per agent: the action that stayed in the argmax throughout the window, else ``None``."""
    local_time: np.ndarray
    """Per agent: share of window iterations with action 0 in the argmax."""
    final_theta: list
    nash_fraction: float
    """Share of all iterations on which a pure Nash profile was played."""
    config: EpisodeConfig = None
    sizes: tuple = ()

    @property
    def learned_nash(self) -> bool:
        return self.nash_fraction > 0.5

    def agent_trace(self, i: int) -> np.ndarray:
        return self.theta_trace[:, i, :self.sizes[i]]

    def modal_profile(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(np.argmax(self.action_counts), self.action_counts.shape))


def agent_streams(seed: int, n_agents: int) -> list[np.random.Generator]:
    """Independent streams: one per agent, then game noise, then the Poisson clock."""
    children = np.random.SeedSequence(seed).spawn(n_agents + 2)
    return [np.random.default_rng(c) for c in children]


def init_stream(seed: int, n_agents: int) -> np.random.Generator:
    """Stream for random initial estimates; independent of the other streams."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(n_agents + 3)[-1])


def _prepare(game: Game, specs: Sequence[ReinforcerSpec], init_rng=None):
    if len(specs) != game.n_players:
        raise ValueError(f"{len(specs)} specs for {game.n_players} players")
    sizes = np.array(game.sizes, dtype=np.int64)
    maxd = int(sizes.max())
    max_payoff = float(np.max(game.payoff_table)) if game.payoff_table is not None else 0.0
    min_payoff = float(np.min(game.payoff_table)) if game.payoff_table is not None else 0.0
    Q = np.zeros((game.n_players, maxd))
    alpha = np.zeros((game.n_players, maxd))
    for i, s in enumerate(specs):
        Q[i, :sizes[i]] = initial_theta(s, int(sizes[i]), max_payoff, init_rng, min_payoff)
        alpha[i, :sizes[i]] = s.alpha_vector(int(sizes[i]))
    strides = np.array([int(np.prod(sizes[j + 1:])) for j in range(sizes.size)], dtype=np.int64)
    return sizes, maxd, Q, alpha, strides


def _draw_uniforms(streams, n_agents, n):
    return np.stack([streams[i].random((n, 3)) for i in range(n_agents)], axis=1)


def _payoff_block(game: Game, noise_rng, n):
    """Payoff arguments for one chunk of the compiled loop."""
    empty3 = np.zeros((1, 1, 1))
    if game.sampler is None:
        table = game.payoff_table.reshape(1, game.n_players, -1)
        return _kernel.PAYOFF_TABLE, table, empty3, np.zeros((1, 1)), 0.0, np.zeros((1, 1), np.int64)
    kp = game.kernel_payoff
    if kp is not None and kp["kind"] == "keyword":
        noise = noise_rng.uniform(kp["value_low"], kp["value_high"],
                                  size=(n, 2, kp["bits"].shape[1]))
        return (_kernel.PAYOFF_KEYWORD, np.zeros((1, 1, 1)), noise, kp["ctr"],
                kp["reserve"], kp["bits"])
    table = game.sampler(noise_rng, n).reshape(n, game.n_players, -1)
    return _kernel.PAYOFF_TABLE_PER_STEP, table, empty3, np.zeros((1, 1)), 0.0, np.zeros((1, 1), np.int64)


class _Loop:
    """State of one run of the compiled loop, shared with the scaled process."""

    def __init__(self, game, specs, iterations, window_start, stride, seed, step_scale=1.0):
        self.game, self.specs = game, list(specs)
        n = game.n_players
        self.streams = agent_streams(seed, n)
        self.sizes, self.maxd, self.Q, self.alpha, self.strides = _prepare(game, specs, init_stream(seed, n))
        self.gamma = np.array([s.gamma for s in specs])
        self.eps = np.array([s.epsilon for s in specs])
        self.sync = np.array([s.is_sync for s in specs])
        self.det = np.array([s.deterministic_ties for s in specs])
        self.custom = any(s.update_family == "separable_custom" for s in specs)
        self.step_scale = float(step_scale)
        self.iterations = iterations
        self.window_start = window_start
        self.stride = stride
        n_prof = int(np.prod(self.sizes))
        self.counts_window = np.zeros(n_prof, dtype=np.int64)
        self.counts_full = np.zeros(n_prof, dtype=np.int64)
        self.lt_counts = np.zeros(n, dtype=np.int64)
        self.argmax_always = np.ones((n, self.maxd), dtype=np.bool_)
        for i in range(n):
            self.argmax_always[i, self.sizes[i]:] = False
        n_snap = (iterations // stride if stride > 0 else 0) + 1
        self.trace = np.zeros((n_snap, n, self.maxd))
        self.trace[0] = self.Q
        self.trace_pos = 1
        self.last_actions = np.full(n, -1, dtype=np.int64)
        self.k = 0

    def advance(self, n_steps):
        """Run ``n_steps`` iterations; raises DivergenceError on a non-finite estimate."""
        target = self.k + n_steps
        while self.k < target:
            m = min(CHUNK, target - self.k)
            unif = _draw_uniforms(self.streams, self.game.n_players, m)
            block = _payoff_block(self.game, self.streams[self.game.n_players], m)
            if self.custom:
                status, done = self._python_chunk(unif, block)
            else:
                status, done, self.trace_pos = _kernel.run_chunk(
                    self.Q, self.sizes, self.strides, self.alpha, self.gamma, self.eps,
                    self.sync, self.det, self.step_scale, *block, unif, self.k,
                    self.window_start, self.stride, self.counts_window, self.counts_full,
                    self.lt_counts, self.argmax_always, self.trace, self.trace_pos,
                    self.last_actions)
            if status != _kernel.OK:
                states = [AgentState(np.nan_to_num(self.Q[i, :self.sizes[i]]), int(self.last_actions[i]))
                          for i in range(self.game.n_players)]
                raise DivergenceError(self.k + done, states)
            self.k += m

    def _python_chunk(self, unif, block):
        """Reference loop for custom separable rules (not compiled)."""
        mode, table, noise, ctr, reserve, bits = block
        n = self.game.n_players
        for t in range(unif.shape[0]):
            k = self.k + t
            acts = np.zeros(n, dtype=np.int64)
            for i in range(n):
                d = self.sizes[i]
                q = self.Q[i, :d]
                if unif[t, i, 0] < self.eps[i]:
                    acts[i] = min(int(unif[t, i, 1] * d), d - 1)
                else:
                    top = np.flatnonzero(q == q.max())
                    pick = 0 if self.det[i] else min(int(unif[t, i, 2] * top.size), top.size - 1)
                    acts[i] = top[pick]
            p = int(acts @ self.strides)
            self.counts_full[p] += 1
            if k >= self.window_start:
                self.counts_window[p] += 1
            new_q = []
            for i, spec in enumerate(self.specs):
                d = self.sizes[i]
                state = AgentState(self.Q[i, :d])

                def rew(b, i=i):
                    a2 = acts.copy()
                    a2[i] = b
                    return _kernel._reward(mode, i, a2, t, table, self.strides, noise, ctr, reserve, bits)

                if spec.is_sync:
                    r = np.array([rew(b) for b in range(d)])
                    upd = separable_update(state, r, spec)
                else:
                    upd = separable_update(state, rew(acts[i]), spec, action=int(acts[i]))
                new_q.append(state.theta + self.step_scale * (upd - state.theta))
            for i in range(n):
                if not np.all(np.isfinite(new_q[i])):
                    return _kernel.DIVERGED, t
                self.Q[i, :self.sizes[i]] = new_q[i]
                self.last_actions[i] = acts[i]
            if k >= self.window_start:
                for i in range(n):
                    q = self.Q[i, :self.sizes[i]]
                    self.lt_counts[i] += q[0] >= q.max()
                    self.argmax_always[i, :self.sizes[i]] &= q >= q.max()
            if self.stride > 0 and (k + 1) % self.stride == 0:
                self.trace[self.trace_pos] = self.Q
                self.trace_pos += 1
        return _kernel.OK, unif.shape[0]


def run_episode(game: Game, specs: Sequence[ReinforcerSpec], config: EpisodeConfig) -> EpisodeResult:
    """Simulate ``config.iterations`` rounds; deterministic given ``config.seed``."""
    window = config.window
    loop = _Loop(game, specs, config.iterations, config.iterations - window,
                 config.snapshot_stride, config.seed)
    loop.advance(config.iterations)
    n = game.n_players
    learned = []
    for i in range(n):
        always = np.flatnonzero(loop.argmax_always[i, :loop.sizes[i]])
        learned.append(int(always[0]) if window > 0 and always.size == 1 else None)
    nash = pure_nash(game) if game.payoff_table is not None else []
    counts_full = loop.counts_full.reshape(game.sizes)
    nash_plays = sum(int(counts_full[p]) for p in nash)
    trace = loop.trace[:loop.trace_pos]
    return EpisodeResult(
        theta_trace=trace,
        trace_steps=np.arange(trace.shape[0]) * config.snapshot_stride,
        action_counts=loop.counts_window.reshape(game.sizes),
        action_counts_full=counts_full,
        learned_actions=learned,
        local_time=loop.lt_counts / window if window > 0 else np.full(n, np.nan),
        final_theta=[loop.Q[i, :loop.sizes[i]].copy() for i in range(n)],
        nash_fraction=nash_plays / config.iterations if config.iterations else 0.0,
        config=config,
        sizes=tuple(int(d) for d in loop.sizes),
    )


def detect_learning(theta_trace, action: int, window: float | int = 0.2) -> str:
    """``"learned"`` iff ``action`` is in the argmax at every point of the trailing window.

    ``window`` is a fraction of the trace (float) or a number of points (int).
    """
    trace = np.asarray(theta_trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    if trace.shape[0] == 0:
        raise ValueError("empty trace")
    n = trace.shape[0]
    w = max(1, int(math.ceil(window * n))) if isinstance(window, float) else int(window)
    tail = trace[n - min(w, n):]
    if tail.shape[0] < 2 or not np.all(np.isfinite(tail)):
        return "undetermined"
    ok = tail[:, action] >= tail.max(axis=1)
    return "learned" if bool(np.all(ok)) else "not_learned"


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepResult:
    cells: list
    episodes: list = field(default_factory=list)


def _episode_row(game_dict, spec_dicts, cfg_kwargs, cell, seed):
    game = game_from_dict(game_dict)
    specs = [ReinforcerSpec.from_dict(d) for d in spec_dicts]
    cfg = EpisodeConfig(**{**cfg_kwargs, "seed": seed})
    row = {**cell, "seed": seed}
    try:
        res = run_episode(game, specs, cfg)
    except DivergenceError as exc:
        row.update(failed=True, error=str(exc))
        return row
    row.update(failed=False, nash_fraction=res.nash_fraction, learned_nash=res.learned_nash,
               learned_actions=res.learned_actions, modal_profile=res.modal_profile())
    for i, lt in enumerate(res.local_time):
        row[f"local_time_{i}"] = float(lt)
    return row


def _resolve_specs(specs, cell, n_players):
    if callable(specs):
        specs = specs(cell)
    if isinstance(specs, ReinforcerSpec):
        specs = [specs] * n_players
    return list(specs)


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def sweep(game_family: str, grid: Sequence[dict], seeds_per_cell: int,
          specs: ReinforcerSpec | Sequence[ReinforcerSpec] | Callable,
          config: EpisodeConfig = EpisodeConfig(), jobs: int | None = 1) -> SweepResult:
    """Run ``seeds_per_cell`` episodes per grid cell and aggregate.

    Episode ``s`` of every cell uses seed ``config.seed + s``. ``specs`` may be
    a single spec shared by all players, a list, or ``cell -> list``.
    """
    if not grid:
        raise ValueError("empty parameter grid")
    cfg_kwargs = {"iterations": config.iterations, "record_window": config.record_window,
                  "snapshot_stride": config.snapshot_stride}
    jobs_list = []
    for cell in grid:
        game = game_from_dict({"family": game_family, "params": cell})
        spec_dicts = [s.to_dict() for s in _resolve_specs(specs, cell, game.n_players)]
        gd = game.to_dict()
        for s in range(seeds_per_cell):
            jobs_list.append((gd, spec_dicts, cfg_kwargs, dict(cell), config.seed + s))
    workers = jobs if jobs is not None else (os.cpu_count() or 1)
    if workers > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_episode_row, *zip(*jobs_list), chunksize=max(1, len(jobs_list) // (4 * workers))))
    else:
        rows = [_episode_row(*j) for j in jobs_list]

    cells = []
    for ci, cell in enumerate(grid):
        cell_rows = rows[ci * seeds_per_cell:(ci + 1) * seeds_per_cell]
        ok = [r for r in cell_rows if not r["failed"]]
        nash_mean, nash_se = _mean_se([float(r["learned_nash"]) for r in ok])
        lt_keys = sorted(k for k in (ok[0] if ok else {}) if k.startswith("local_time_"))
        lt_vals = [np.mean([r[k] for k in lt_keys]) for r in ok] if lt_keys else []
        lt_mean, lt_se = _mean_se(lt_vals)
        cells.append({**cell, "seeds": seeds_per_cell, "failures": len(cell_rows) - len(ok),
                      "nash_fraction": nash_mean, "nash_fraction_se": nash_se,
                      "mean_local_time": lt_mean, "mean_local_time_se": lt_se})
    return SweepResult(cells=cells, episodes=rows)


def write_episodes_csv(rows: Sequence[dict], path) -> None:
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (json.dumps(v) if isinstance(v, (list, tuple)) else v) for k, v in r.items()})


def write_trace_json(result: EpisodeResult, path, labels=None) -> None:
    payload = {
        "steps": result.trace_steps.tolist(),
        "agents": [{"theta": result.agent_trace(i).tolist(),
                    "labels": list(labels[i]) if labels else None}
                   for i in range(len(result.sizes))],
        "seed": result.config.seed if result.config else None,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
