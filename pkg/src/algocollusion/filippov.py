"""Filippov solutions of piecewise fields with argmax switching surfaces.

Every agent's switching surface is the set where two of that agent's
estimates tie for the maximum. An agent is either *fixed* at a greedy action
or *sliding* on the tie between actions ``a < b``, carrying a weight ``w`` on
``a``. The active field is the multilinear mix of the adjacent pieces; the
weights are chosen so the mix is tangent to every active surface. At most two
agents may slide at once.

Normals point toward the lower-index action (``e_a - e_b``), so for the
two-action games the positive side is where action 0 is greedy.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, linprog

from .fluid import PiecewiseField

__all__ = [
    "SwitchingSurface",
    "BoundaryReport",
    "DegenerateBoundaryError",
    "agent_surface",
    "classify_boundary",
    "sliding_field",
    "mixed_field",
    "solve_weights",
    "integrate",
    "HybridTrajectory",
    "Segment",
    "classify_codim2",
    "double_sliding_field",
    "in_convex_hull",
]


class DegenerateBoundaryError(ValueError):
    """A normal component or the sliding denominator vanished."""


@dataclass(frozen=True)
class SwitchingSurface:
    normal: np.ndarray
    offset: float
    adjacent: tuple
    """(label on the side ``normal . theta > offset``, label on the other side)."""

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.any(n):
            raise ValueError("surface normal must be non-zero")
        object.__setattr__(self, "normal", n)

    def value(self, theta) -> float:
        return float(self.normal @ np.asarray(theta, dtype=float) - self.offset)


def agent_surface(field: PiecewiseField, agent: int, label, a: int = 0, b: int = 1) -> SwitchingSurface:
    """Surface where ``agent`` ties actions ``a`` and ``b``; others keep ``label``."""
    c = np.zeros(field.dim)
    c[field.index(agent, a)] = 1.0
    c[field.index(agent, b)] = -1.0
    la = list(label)
    lb = list(label)
    la[agent], lb[agent] = a, b
    return SwitchingSurface(c, 0.0, (tuple(la), tuple(lb)))


@dataclass
class BoundaryReport:
    kind: str
    """``crossing``, ``sliding``, ``repulsive`` or ``degenerate``."""
    normal_components: tuple[float, float]
    sliding_field: np.ndarray | None = None
    local_time: float | None = None


def _scale(*vecs):
    return max(1.0, *(float(np.linalg.norm(v)) for v in vecs))


def classify_boundary(field: PiecewiseField, surface: SwitchingSurface, point,
                      tol: float = 1e-12, on_tol: float = 1e-7) -> BoundaryReport:
    point = np.asarray(point, dtype=float)
    if abs(surface.value(point)) > on_tol * max(1.0, np.linalg.norm(point)):
        raise ValueError("point is not on the surface")
    pos, neg = surface.adjacent
    fp = field.eval_piece(pos, point)
    fn = field.eval_piece(neg, point)
    sp, sn = float(surface.normal @ fp), float(surface.normal @ fn)
    thresh = tol * _scale(fp, fn) * np.linalg.norm(surface.normal)
    if min(abs(sp), abs(sn)) <= thresh:
        return BoundaryReport("degenerate", (sp, sn))
    if sp * sn > 0:
        return BoundaryReport("crossing", (sp, sn))
    if sp < 0 < sn:
        tau = sn / (sn - sp)
        return BoundaryReport("sliding", (sp, sn), tau * fp + (1 - tau) * fn, tau)
    return BoundaryReport("repulsive", (sp, sn))


def sliding_field(field: PiecewiseField, surface: SwitchingSurface, point, tol: float = 1e-12):
    """Tangent convex combination ``tau F_pos + (1 - tau) F_neg`` and ``tau``."""
    rep = classify_boundary(field, surface, point, tol=tol)
    if rep.kind != "sliding":
        raise DegenerateBoundaryError(f"boundary point is {rep.kind}, not sliding")
    return rep.sliding_field, rep.local_time


# ---------------------------------------------------------------------------
# modes and weights
#
# A mode is a tuple with one entry per agent: an int (fixed greedy action) or
# a pair (a, b) (sliding on the a/b tie).

def _sliding_agents(mode):
    return [i for i, m in enumerate(mode) if isinstance(m, tuple)]


def _label_with(mode, choice):
    lab = []
    for i, m in enumerate(mode):
        lab.append(choice[i] if isinstance(m, tuple) else m)
    return tuple(lab)


def mixed_field(field: PiecewiseField, theta, mode, weights) -> np.ndarray:
    """Multilinear mix of the pieces adjacent to ``mode``; ``weights[i]`` sits on ``mode[i][0]``."""
    S = _sliding_agents(mode)
    out = np.zeros(field.dim)
    for bits in itertools.product((0, 1), repeat=len(S)):
        coef = 1.0
        choice = {}
        for i, bit in zip(S, bits):
            choice[i] = mode[i][bit]
            coef *= weights[i] if bit == 0 else 1.0 - weights[i]
        if coef != 0.0:
            out += coef * field.eval_piece(_label_with(mode, choice), theta)
    return out


def _normal_comp(field, F, agent, pair):
    return F[field.index(agent, pair[0])] - F[field.index(agent, pair[1])]


def _corner_values(field, theta, mode):
    """Normal components of every sliding agent at every adjacent piece.

    Returns ``{agent: {choice_tuple: value}}`` with choices ordered like the
    sliding agents.
    """
    S = _sliding_agents(mode)
    out = {i: {} for i in S}
    for bits in itertools.product((0, 1), repeat=len(S)):
        choice = {i: mode[i][bit] for i, bit in zip(S, bits)}
        F = field.eval_piece(_label_with(mode, choice), theta)
        for i in S:
            out[i][bits] = _normal_comp(field, F, i, mode[i])
    return S, out


def _bilinear(P, wa, wb):
    return (wa * wb * P[(0, 0)] + (1 - wa) * wb * P[(1, 0)]
            + wa * (1 - wb) * P[(0, 1)] + (1 - wa) * (1 - wb) * P[(1, 1)])


def _solve_double(PA, PB, newton_iter: int = 30, tol: float = 1e-13):
    """Weights (wA, wB) zeroing both bilinear normal components, or ``None``.

    Newton from the centre first, then a scan of the reduced scalar equation
    with bisection refinement.
    """
    def resid(w):
        return np.array([_bilinear(PA, w[0], w[1]), _bilinear(PB, w[0], w[1])])

    def jac(w):
        wa, wb = w
        return np.array([
            [wb * (PA[(0, 0)] - PA[(1, 0)]) + (1 - wb) * (PA[(0, 1)] - PA[(1, 1)]),
             wa * (PA[(0, 0)] - PA[(0, 1)]) + (1 - wa) * (PA[(1, 0)] - PA[(1, 1)])],
            [wb * (PB[(0, 0)] - PB[(1, 0)]) + (1 - wb) * (PB[(0, 1)] - PB[(1, 1)]),
             wa * (PB[(0, 0)] - PB[(0, 1)]) + (1 - wa) * (PB[(1, 0)] - PB[(1, 1)])],
        ])

    scale = max(1.0, *(abs(v) for v in PA.values()), *(abs(v) for v in PB.values()))
    w = np.array([0.5, 0.5])
    for _ in range(newton_iter):
        r = resid(w)
        if np.max(np.abs(r)) < tol * scale:
            if np.all((w >= 0) & (w <= 1)):
                return w
            break
        try:
            w = w - np.linalg.solve(jac(w), r)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(w)):
            break

    def wa_of(wb):
        den = wb * (PA[(0, 0)] - PA[(1, 0)]) + (1 - wb) * (PA[(0, 1)] - PA[(1, 1)])
        num = -(wb * PA[(1, 0)] + (1 - wb) * PA[(1, 1)])
        return num / den if den != 0 else np.nan

    def h(wb):
        return _bilinear(PB, wa_of(wb), wb)

    grid = np.linspace(0.0, 1.0, 129)
    vals = np.array([h(x) for x in grid])
    for k in range(grid.size - 1):
        lo, hi = vals[k], vals[k + 1]
        if not (np.isfinite(lo) and np.isfinite(hi)):
            continue
        if lo == 0.0 or lo * hi < 0:
            try:
                wb = grid[k] if lo == 0.0 else brentq(h, grid[k], grid[k + 1], xtol=1e-15, rtol=1e-15)
            except ValueError:
                # a pole of wa_of inside the bracket
                continue
            wa = wa_of(wb)
            if 0.0 <= wa <= 1.0 and abs(h(wb)) < 1e-9 * scale:
                return np.array([wa, wb])
    if vals[-1] == 0.0 and 0.0 <= wa_of(1.0) <= 1.0:
        return np.array([wa_of(1.0), 1.0])
    return None


def solve_weights(field: PiecewiseField, theta, mode):
    """Weights making the mixed field tangent to every sliding surface.

    Returns ``(weights, corner_values)``; weights is ``None`` if the
    equations have no solution in the unit box (or the denominator vanishes).
    """
    S, vals = _corner_values(field, theta, mode)
    if not S:
        return {}, vals
    if len(S) == 1:
        i = S[0]
        sa, sb = vals[i][(0,)], vals[i][(1,)]
        den = sb - sa
        if den == 0.0:
            return None, vals
        return {i: sb / den}, vals
    if len(S) == 2:
        i, j = S
        w = _solve_double(vals[i], vals[j])
        if w is None:
            return None, vals
        return {i: float(w[0]), j: float(w[1])}, vals
    raise NotImplementedError("sliding on more than two surfaces is not supported")


def _attractive(S, vals) -> bool:
    """Each sliding surface attracts from both sides, whatever the other sliders do."""
    for k, i in enumerate(S):
        for bits, v in vals[i].items():
            if bits[k] == 0 and not v < 0:
                return False
            if bits[k] == 1 and not v > 0:
                return False
    return True


# ---------------------------------------------------------------------------
# codimension two

def classify_codim2(field: PiecewiseField, point, pairs=((0, 1), (0, 1))) -> dict:
    """Nodal attractivity of the intersection of two agents' tie surfaces.

    ``slacks`` holds the eight normal components, sign-adjusted so that a
    positive slack means the corresponding inequality holds.
    """
    point = np.asarray(point, dtype=float)
    mode = tuple(tuple(p) for p in pairs)
    S, vals = _corner_values(field, point, mode)
    names = {0: "C", 1: "D"}
    slacks = {}
    for k, i in enumerate(S):
        for bits, v in vals[i].items():
            key = f"agent{i}:" + ",".join(names.get(mode[j][b], str(mode[j][b])) for j, b in zip(S, bits))
            slacks[key] = -v if bits[k] == 0 else v
    return {"nodally_attractive": all(s > 0 for s in slacks.values()), "slacks": slacks}


def double_sliding_field(field: PiecewiseField, point, pairs=((0, 1), (0, 1))):
    """Bilinear double-sliding field and its weights ``(w_A, w_B)``.

    Raises :class:`DegenerateBoundaryError` when no weights exist in the unit square.
    """
    point = np.asarray(point, dtype=float)
    mode = tuple(tuple(p) for p in pairs)
    w, _ = solve_weights(field, point, mode)
    if w is None:
        raise DegenerateBoundaryError("no double-sliding weights in the unit square")
    S = _sliding_agents(mode)
    return mixed_field(field, point, mode, w), tuple(w[i] for i in S)


# ---------------------------------------------------------------------------
# integration

@dataclass
class Segment:
    mode: tuple
    t0: float
    t1: float
    t: np.ndarray
    y: np.ndarray
    interpolants: list = dc_field(default_factory=list, repr=False)
    """(t_start, t_end, callable) pieces of dense output."""

    @property
    def sliding(self) -> bool:
        return bool(_sliding_agents(self.mode))

    def __call__(self, t):
        for a, b, f in self.interpolants:
            if a - 1e-12 <= t <= b + 1e-12:
                return f(t)
        return self.y[:, -1]


def mode_label(mode, names=None) -> str:
    parts = []
    for m in mode:
        if isinstance(m, tuple):
            parts.append("~".join(names[a] if names else str(a) for a in m))
        else:
            parts.append(names[m] if names else str(m))
    return ",".join(parts)


@dataclass
class HybridTrajectory:
    segments: list
    events: list
    metadata: dict

    @property
    def t_final(self) -> float:
        return self.segments[-1].t1 if self.segments else 0.0

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].y[:, -1].copy()

    @property
    def final_mode(self):
        return self.segments[-1].mode

    @property
    def steady_state(self):
        for e in self.events:
            if e["kind"] == "steady":
                return e
        return None

    def sample(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((times.size, self.segments[0].y.shape[0]))
        for k, t in enumerate(times):
            seg = self.segment_at(t)
            out[k] = seg(min(max(t, seg.t0), seg.t1))
        return out

    def segment_at(self, t):
        for seg in self.segments:
            if seg.t0 <= t <= seg.t1:
                return seg
        return self.segments[-1] if t > self.t_final else self.segments[0]

    def step_points(self):
        """All stored integrator points as ``(t, state, segment)`` triples."""
        for seg in self.segments:
            for k in range(seg.t.size):
                yield seg.t[k], seg.y[:, k], seg

    def time_in_modes(self) -> dict:
        out = {}
        for seg in self.segments:
            out[seg.mode] = out.get(seg.mode, 0.0) + seg.t1 - seg.t0
        return out

    def to_csv(self, path, stride: int = 1, names=None) -> None:
        dim = self.segments[0].y.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *[f"theta_{k}" for k in range(dim)], "mode"])
            k = 0
            for t, y, seg in self.step_points():
                if k % stride == 0:
                    w.writerow([repr(float(t)), *[repr(float(v)) for v in y], mode_label(seg.mode, names)])
                k += 1


class _Stalled(Exception):
    pass


class _Integrator:
    max_rhs = 20_000

    def __init__(self, field, horizon, rtol, atol, delta, ss_tol, nudge, tie_tol,
                 max_segments, sliding_chunk, exit_ss_tol=1e-7):
        self.f = field
        self.horizon = horizon
        self.rtol, self.atol = rtol, atol
        self.delta = delta
        self.ss_tol = ss_tol
        self.exit_ss_tol = exit_ss_tol
        self.nudge = nudge
        self.tie_tol = tie_tol
        self.max_segments = max_segments
        self.chunk = sliding_chunk
        self.events = []
        self.segments = []

    # -- geometry -----------------------------------------------------------
    def ties(self, theta):
        """Per agent: sorted tuple of actions tied (within tolerance) for the max."""
        out = []
        for i in range(self.f.n_agents):
            blk = self.f.block(theta, i)
            m = blk.max()
            tol = self.tie_tol * max(1.0, abs(m))
            out.append(tuple(int(a) for a in np.flatnonzero(blk >= m - tol)))
        return out

    def project(self, theta, mode):
        theta = theta.copy()
        for i, m in enumerate(mode):
            if isinstance(m, tuple):
                ia, ib = self.f.index(i, m[0]), self.f.index(i, m[1])
                v = 0.5 * (theta[ia] + theta[ib])
                theta[ia] = theta[ib] = v
        return theta

    def push(self, theta, mode, tied):
        """Move fixed agents that sit on a tie strictly into their chosen side."""
        theta = theta.copy()
        for i, m in enumerate(mode):
            if isinstance(m, tuple) or len(tied[i]) < 2:
                continue
            blk = self.f.block(theta, i)
            top = blk[list(tied[i])].max()
            eta = self.nudge * max(1.0, abs(top))
            for a in tied[i]:
                theta[self.f.index(i, a)] = top + eta if a == m else top - eta
        return theta

    def rhs(self, mode):
        if not _sliding_agents(mode):
            def f(t, y):
                return self.f.eval_piece(mode, y)
            return f

        def g(t, y):
            w, _ = solve_weights(self.f, y, mode)
            if w is None:
                w = {i: 0.5 for i in _sliding_agents(mode)}
            return mixed_field(self.f, y, mode, w)
        return g

    # -- mode selection ------------------------------------------------------
    def choose_mode(self, theta, tied, forced=None):
        """Pick the Filippov mode at a point where agents in ``tied`` sit on ties.

        Candidates with more sliding agents are tried first. A fixed agent's
        side is admissible when the resulting field moves it into that side.
        Returns ``(mode, kind)``.
        """
        forced = forced or {}
        options = []
        for i in range(self.f.n_agents):
            t = tied[i]
            if i in forced:
                options.append([forced[i]])
            elif len(t) == 1:
                options.append([t[0]])
            elif len(t) == 2:
                options.append([t, t[0], t[1]])
            else:
                return None, "unresolved_corner"
        cands = list(itertools.product(*options))
        if sum(isinstance(m, tuple) for m in cands[0]) > 2:
            return None, "unresolved_corner"
        cands.sort(key=lambda m: -len(_sliding_agents(m)))
        admissible = []
        for mode in cands:
            if len(_sliding_agents(mode)) > 2:
                continue
            S = _sliding_agents(mode)
            w, vals = solve_weights(self.f, theta, mode)
            if S and (w is None or not _attractive(S, vals)):
                continue
            F = mixed_field(self.f, theta, mode, w)
            ok = True
            for i, m in enumerate(mode):
                if isinstance(m, tuple) or len(tied[i]) < 2 or i in forced:
                    continue
                other = [a for a in tied[i] if a != m][0]
                v = F[self.f.index(i, m)] - F[self.f.index(i, other)]
                if not v > 0:
                    ok = False
                    break
            if ok:
                admissible.append(mode)
        if not admissible:
            # spiralling corners: accept tangent weights inside the box even
            # though not every adjacent piece points toward the surface
            for mode in cands:
                S = _sliding_agents(mode)
                if not S or len(S) > 2:
                    continue
                w, _ = solve_weights(self.f, theta, mode)
                if w is not None and all(self.delta <= w[i] <= 1 - self.delta for i in S):
                    return mode, "weak_sliding"
            return self._fallback(theta, tied, forced), "degenerate"
        best = max(len(_sliding_agents(m)) for m in admissible)
        top = [m for m in admissible if len(_sliding_agents(m)) == best]
        if best == 0 and len(top) > 1:
            # several sides repel: take the positive-normal (lower index) side
            pick = min(top, key=lambda m: tuple(m))
            return pick, "repulsive"
        return top[0], "sliding" if best else "crossing"

    def _fallback(self, theta, tied, forced):
        mode = []
        for i, t in enumerate(tied):
            if i in forced:
                mode.append(forced[i])
            elif len(t) == 1:
                mode.append(t[0])
            else:
                lab = [x[0] for x in tied]
                fa = self.f.eval_piece(tuple(lab[:i] + [t[0]] + lab[i + 1:]), theta)
                fb = self.f.eval_piece(tuple(lab[:i] + [t[1]] + lab[i + 1:]), theta)
                avg = 0.5 * (fa + fb)
                mode.append(t[0] if avg[self.f.index(i, t[0])] >= avg[self.f.index(i, t[1])] else t[1])
        return tuple(mode)

    # -- events -----------------------------------------------------------------
    def make_events(self, mode):
        evs = []
        f = self.f
        for i, m in enumerate(mode):
            d = f.sizes[i]
            if isinstance(m, tuple):
                rest = [c for c in range(d) if c not in m]
                if rest:
                    def ev(t, y, i=i, m=m, rest=rest):
                        blk = f.block(y, i)
                        return min(blk[m[0]], blk[m[1]]) - blk[rest].max()
                    ev.info = ("corner", i)
                    evs.append(ev)
            else:
                if d > 1:
                    def ev(t, y, i=i, m=m):
                        blk = f.block(y, i)
                        return blk[m] - np.delete(blk, m).max()
                    ev.info = ("hit", i)
                    evs.append(ev)
        S = _sliding_agents(mode)
        for i in S:
            def lo(t, y, i=i):
                w, _ = solve_weights(f, y, mode)
                return (w[i] if w is not None else -1.0) - self.delta

            def hi(t, y, i=i):
                w, _ = solve_weights(f, y, mode)
                return 1.0 - self.delta - (w[i] if w is not None else 2.0)
            lo.info = ("exit_low", i)
            hi.info = ("exit_high", i)
            evs += [lo, hi]
        rhs = self.rhs(mode)

        def steady(t, y):
            return np.linalg.norm(rhs(t, y)) - self.ss_tol
        steady.info = ("steady", None)
        evs.append(steady)
        for e in evs:
            e.terminal = True
            e.direction = -1
        return evs

    # -- main loop ---------------------------------------------------------------
    def run(self, start):
        theta = np.asarray(start, dtype=float).copy()
        t = 0.0
        tied = self.ties(theta)
        mode, kind = self.choose_mode(theta, tied)
        meta = {"start_kind": kind}
        if mode is None:
            self.events.append({"time": 0.0, "kind": kind, "state": theta.copy()})
            return meta
        if kind == "repulsive":
            meta["repulsive_start"] = "perturbed toward the lower-index action"
        theta = self.project(theta, mode)
        theta = self.push(theta, mode, tied)
        stalls = 0
        while t < self.horizon and len(self.segments) < self.max_segments:
            seg, ev, theta_end = self.run_segment(mode, t, theta)
            if seg is not None:
                self.segments.append(seg)
            stalls = stalls + 1 if seg is None or seg.t1 - seg.t0 < 1e-12 else 0
            t = seg.t1 if seg is not None else t
            theta = theta_end
            if ev is None:
                break
            kind, agent = ev
            if kind == "stalled":
                self.events.append({"time": t, "kind": "stalled", "mode": mode, "state": theta.copy()})
                break
            if kind == "steady":
                self.events.append({"time": t, "kind": "steady", "mode": mode, "state": theta.copy(),
                                    "pseudo": bool(_sliding_agents(mode))})
                break
            if kind in ("exit_low", "exit_high"):
                # a weight that drains to 0 or 1 while the mixed field dies out
                # means the saturated side's rest point sits on the tie
                nm = float(np.linalg.norm(self.rhs(mode)(t, theta)))
                if nm < self.exit_ss_tol:
                    self.events.append({"time": t, "kind": "steady", "mode": mode, "state": theta.copy(),
                                        "pseudo": True, "at_exit": True, "field_norm": nm})
                    break
            if stalls > 50:
                self.events.append({"time": t, "kind": "stalled", "mode": mode, "state": theta.copy()})
                break
            forced = {}
            if kind in ("exit_low", "exit_high"):
                pair = mode[agent]
                forced[agent] = pair[1] if kind == "exit_low" else pair[0]
            tied = self.ties(theta)
            if kind == "hit" and len(tied[agent]) < 2:
                # event located slightly early; snap the tie
                blk = self.f.block(theta, agent)
                order = np.argsort(blk)[::-1]
                tied[agent] = tuple(sorted(int(x) for x in order[:2]))
            for i, m in enumerate(mode):
                if isinstance(m, tuple) and i not in forced and len(tied[i]) < 2:
                    tied[i] = m
            new_mode, how = self.choose_mode(theta, tied, forced)
            self.events.append({"time": t, "kind": kind, "agent": agent, "from": mode, "to": new_mode,
                                "resolution": how, "state": theta.copy()})
            if new_mode is None:
                break
            theta = self.project(theta, new_mode)
            if forced:
                for i, side in forced.items():
                    pair = mode[i]
                    other = pair[0] if side == pair[1] else pair[1]
                    ia, ib = self.f.index(i, side), self.f.index(i, other)
                    eta = self.nudge * max(1.0, abs(theta[ia]))
                    theta[ia] += eta
                    theta[ib] -= eta
            theta = self.push(theta, new_mode, tied)
            mode = new_mode
        return meta

    def run_segment(self, mode, t0, theta):
        raw = self.rhs(mode)
        budget = [self.max_rhs]

        def rhs(t, y):
            budget[0] -= 1
            if budget[0] < 0:
                raise _Stalled()
            return raw(t, y)
        evs = self.make_events(mode)
        sliding = bool(_sliding_agents(mode))
        chunk = self.chunk if sliding else self.horizon
        ts, ys, interps = [t0], [theta[:, None]], []
        t = t0
        y = theta
        hit = None
        while t < self.horizon:
            t_end = min(self.horizon, t + chunk)
            try:
                sol = solve_ivp(rhs, (t, t_end), y, method="DOP853", rtol=self.rtol, atol=self.atol,
                                events=evs, dense_output=True)
            except _Stalled:
                hit = ("stalled", None)
                break
            if sol.status == -1:
                raise FloatingPointError(f"integration failed: {sol.message}")
            interps.append((t, sol.t[-1], sol.sol))
            ts.extend(sol.t[1:].tolist())
            ys.append(sol.y[:, 1:])
            y = sol.y[:, -1].copy()
            t = float(sol.t[-1])
            if sliding:
                y = self.project(y, mode)
            if sol.status == 1:
                for e, te in zip(evs, sol.t_events):
                    if te.size:
                        hit = e.info
                        break
                break
        Y = np.concatenate(ys, axis=1)
        Y[:, -1] = y
        seg = Segment(mode, t0, t, np.asarray(ts), Y, interps)
        return seg, hit, y


def integrate(field: PiecewiseField, start, horizon: float, rtol: float = 1e-10, atol: float = 1e-12,
              delta: float = 1e-8, ss_tol: float = 1e-10, nudge: float = 1e-11, tie_tol: float = 1e-12,
              max_segments: int = 20_000, sliding_chunk: float | None = None,
              exit_ss_tol: float = 1e-7) -> HybridTrajectory:
    """Forward Filippov solution from ``start`` over ``[0, horizon]``.

    Smooth pieces are integrated with an adaptive Runge-Kutta method and
    terminal events on every argmax gap. On a sliding surface the state moves
    with the tangent mix of the adjacent pieces and is projected back onto
    the surface after every chunk. Sliding ends when a weight leaves
    ``[delta, 1 - delta]``; the state then continues on the saturated side,
    unless the mixed field has already dropped below ``exit_ss_tol``, which
    is recorded as a pseudo-steady-state.
    A start on a repulsive tie is moved to the lower-index action's side and
    the choice is recorded in ``metadata``.
    """
    chunk = sliding_chunk if sliding_chunk is not None else max(horizon / 64.0, 1e-9)
    integ = _Integrator(field, float(horizon), rtol, atol, delta, ss_tol, nudge, tie_tol,
                        max_segments, chunk, exit_ss_tol)
    meta = integ.run(start)
    if not integ.segments:
        y = np.asarray(start, dtype=float)[:, None]
        integ.segments.append(Segment((), 0.0, 0.0, np.zeros(1), y, [(0.0, 0.0, lambda t, y=y: y[:, 0])]))
    return HybridTrajectory(integ.segments, integ.events, meta)


def in_convex_hull(v, vectors, tol: float = 1e-8) -> bool:
    """Whether ``v`` is a convex combination of ``vectors`` (small LP)."""
    V = np.asarray(vectors, dtype=float).T
    k = V.shape[1]
    A_eq = np.vstack([V, np.ones((1, k))])
    b_eq = np.concatenate([np.asarray(v, dtype=float), [1.0]])
    # minimize the L1 residual with slack variables
    n = A_eq.shape[0]
    c = np.concatenate([np.zeros(k), np.ones(2 * n)])
    A = np.hstack([A_eq, np.eye(n), -np.eye(n)])
    res = linprog(c, A_eq=A, b_eq=b_eq, bounds=[(0, None)] * (k + 2 * n), method="highs")
    scale = max(1.0, float(np.abs(b_eq).max()))
    return bool(res.status == 0 and res.fun <= tol * scale)
