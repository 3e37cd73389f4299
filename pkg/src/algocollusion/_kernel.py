"""Compiled inner loop shared by the discrete simulator and the scaled jump process."""
import numpy as np
from numba import njit

PAYOFF_TABLE = 0
PAYOFF_TABLE_PER_STEP = 1
PAYOFF_KEYWORD = 2

OK = 0
DIVERGED = 1


@njit(cache=True)
def _flat(acts, strides):
    p = 0
    for j in range(acts.size):
        p += acts[j] * strides[j]
    return p


@njit(cache=True)
def _reward(mode, i, acts, t, table, strides, noise, ctr, reserve, bits):
    if mode == PAYOFF_TABLE:
        return table[0, i, _flat(acts, strides)]
    if mode == PAYOFF_TABLE_PER_STEP:
        return table[t, i, _flat(acts, strides)]
    # two-player keyword auction: second price with reserve, ties go to player 0
    j_opp = 1 - i
    total = 0.0
    for kw in range(bits.shape[1]):
        mine = bits[acts[i], kw]
        theirs = bits[acts[j_opp], kw]
        if not mine:
            continue
        v = noise[t, i, kw]
        if theirs:
            w = noise[t, j_opp, kw]
            if v > w or (v == w and i == 0):
                total += ctr[i, kw] * (v - w)
        else:
            total += ctr[i, kw] * (v - reserve)
    return total


@njit(cache=True)
def run_chunk(Q, sizes, strides, alpha, gamma, eps, sync, det_ties, step_scale,
              mode, table, noise, ctr, reserve, bits,
              unif, k0, window_start, stride,
              counts_window, counts_full, lt_counts, argmax_always,
              trace, trace_pos, last_actions):
    """Advance ``unif.shape[0]`` iterations in place.

    Returns ``(status, steps_done, trace_pos)``.
    """
    n_agents = sizes.size
    nsteps = unif.shape[0]
    acts = np.zeros(n_agents, dtype=np.int64)
    r_played = np.zeros(n_agents)
    maxd = Q.shape[1]
    for t in range(nsteps):
        k = k0 + t
        for i in range(n_agents):
            d = sizes[i]
            u0 = unif[t, i, 0]
            if u0 < eps[i]:
                a = int(unif[t, i, 1] * d)
                if a >= d:
                    a = d - 1
                acts[i] = a
            else:
                m = Q[i, 0]
                for b in range(1, d):
                    if Q[i, b] > m:
                        m = Q[i, b]
                n_top = 0
                for b in range(d):
                    if Q[i, b] == m:
                        n_top += 1
                if det_ties[i]:
                    pick = 0
                else:
                    pick = int(unif[t, i, 2] * n_top)
                    if pick >= n_top:
                        pick = n_top - 1
                seen = 0
                for b in range(d):
                    if Q[i, b] == m:
                        if seen == pick:
                            acts[i] = b
                            break
                        seen += 1
        p = _flat(acts, strides)
        counts_full[p] += 1
        if k >= window_start:
            counts_window[p] += 1

        for i in range(n_agents):
            r_played[i] = _reward(mode, i, acts, t, table, strides, noise, ctr, reserve, bits)

        for i in range(n_agents):
            d = sizes[i]
            m = Q[i, 0]
            for b in range(1, d):
                if Q[i, b] > m:
                    m = Q[i, b]
            cont = gamma[i] * m
            if sync[i]:
                own = acts[i]
                for b in range(d):
                    acts[i] = b
                    r = _reward(mode, i, acts, t, table, strides, noise, ctr, reserve, bits)
                    Q[i, b] += step_scale * alpha[i, b] * (r + cont - Q[i, b])
                acts[i] = own
            else:
                a = acts[i]
                Q[i, a] += step_scale * alpha[i, a] * (r_played[i] + cont - Q[i, a])
            for b in range(d):
                if not np.isfinite(Q[i, b]):
                    return DIVERGED, t, trace_pos
            last_actions[i] = acts[i]

        if k >= window_start:
            for i in range(n_agents):
                d = sizes[i]
                m = Q[i, 0]
                for b in range(1, d):
                    if Q[i, b] > m:
                        m = Q[i, b]
                if Q[i, 0] >= m:
                    lt_counts[i] += 1
                for b in range(d):
                    if Q[i, b] < m:
                        argmax_always[i, b] = False

        if stride > 0 and (k + 1) % stride == 0:
            for i in range(n_agents):
                for b in range(maxd):
                    trace[trace_pos, i, b] = Q[i, b]
            trace_pos += 1
    return OK, nsteps, trace_pos
