"""Independent reference implementations used as test oracles.

Nothing here imports the package; each routine is written from the model
definitions directly so that agreement is a real cross-check.
"""
import itertools

import numpy as np


def pd_matrices(g, eps, gam, alpha=1.0):
    """Symmetric-reduction affine pieces of the contribution game, written out
    by hand. State is (Q_C, Q_D); e is the per-action exploration share."""
    e = eps / 2
    AC = alpha * np.array([[(1 - e) * (gam - 1), 0.0], [gam * e, -e]])
    bC = alpha * np.array([(1 - e) * (2 - e) * g, e * (2 + g - g * e)])
    AD = alpha * np.array([[-e, gam * e], [0.0, (1 - e) * (gam - 1)]])
    bD = alpha * np.array([(1 + e) * e * g, (1 - e) * (2 + e * g)])
    return AC, bC, AD, bD


def sliding_root(g, eps, gam):
    """Diagonal point where the Filippov combination of the two pieces is
    stationary, found from the polynomial numerator (no closed form)."""
    AC, bC, AD, bD = pd_matrices(g, eps, gam)
    c = np.array([1.0, -1.0])
    P = np.polynomial.Polynomial
    Q = P([0, 1])
    FC = [AC[k, 0] * Q + AC[k, 1] * Q + bC[k] for k in range(2)]
    FD = [AD[k, 0] * Q + AD[k, 1] * Q + bD[k] for k in range(2)]
    cc = FC[0] - FC[1]
    cd = FD[0] - FD[1]
    num = cd * FC[0] - cc * FD[0]
    out = []
    for r in num.roots():
        if abs(r.imag) < 1e-9:
            r = r.real
            if cc(r) < 0 < cd(r):
                out.append((r, cd(r) / (cd(r) - cc(r))))
    return out


def region_by_roots(R, S, T, P, eps):
    """Existence of a cooperative pseudo-steady-state in a symmetric 2x2 game
    via the roots of the sliding-field numerator along the diagonal.

    Uses the translation invariance of the undiscounted-difference dynamics:
    only the sign structure of the normal components matters, so the diagonal
    value enters as a shift ``w`` of all payoffs.
    """
    e = eps / 2
    a1 = (1 - e) * R + e * S
    a2 = (1 - e) * T + e * P
    d1 = e * R + (1 - e) * S
    d2 = e * T + (1 - e) * P
    W = np.polynomial.Polynomial([0, 1])
    cFC = (1 - e) * (a1 + W) - e * (a2 + W)
    cFD = e * (d1 + W) - (1 - e) * (d2 + W)
    N = cFD * (1 - e) * (a1 + W) - cFC * e * (d1 + W)
    roots = [r.real for r in N.roots() if abs(r.imag) < 1e-12]
    return [r for r in roots if cFC(r) < 0 < cFD(r)]


def q_learning_pd(g, eps, alpha, gamma, iters, init, explore, rnd):
    """Plain-loop asynchronous Q-learning in the contribution game with given
    exploration coins and random actions; ties go to the lower index."""
    R = np.array([[2 * g, g], [2 + g, 2.0]])
    Q = np.array(init, dtype=float).reshape(2, 2).copy()
    out = np.empty((iters + 1, 2, 2))
    out[0] = Q
    for k in range(iters):
        a = [0, 0]
        for i in range(2):
            a[i] = rnd[k, i] if explore[k, i] else int(np.argmax(Q[i]))
        for i in range(2):
            r = R[a[i], a[1 - i]]
            Q[i, a[i]] += alpha * (r + gamma * Q[i].max() - Q[i, a[i]])
        out[k + 1] = Q
    return out


def iesds(M, weak):
    """Symmetric two-player iterated elimination on own-payoff matrix M."""
    alive = list(range(M.shape[0]))
    while True:
        sub = M[np.ix_(alive, alive)]
        dom = set()
        for a in range(len(alive)):
            for b in range(len(alive)):
                if a == b:
                    continue
                d = sub[b] - sub[a]
                if (weak and np.all(d >= 0) and np.any(d > 0)) or (not weak and np.all(d > 0)):
                    dom.add(alive[a])
                    break
        if not dom:
            return alive
        alive = [x for x in alive if x not in dom]


def vcg_two_slot_bruteforce(bids, clicks=(100, 80)):
    """Welfare-maximizing assignment of two slots by enumeration and
    Clarke-pivot payments; ties broken toward lower index. Integer bids."""
    n = len(bids)

    def best(excluded):
        top, arg = -1, None
        for s0, s1 in itertools.permutations([k for k in range(n) if k != excluded], 2):
            w = clicks[0] * bids[s0] + clicks[1] * bids[s1]
            key = (w, -s0, -s1)
            if top == -1 or key > top:
                top, arg = key, (s0, s1)
        return top[0], arg

    welfare, slots = best(None)
    pay = [0] * n
    for k in slots:
        others_without = best(k)[0]
        pos = slots.index(k)
        others_with = welfare - clicks[pos] * bids[k]
        pay[k] = others_without - others_with
    return slots, pay
